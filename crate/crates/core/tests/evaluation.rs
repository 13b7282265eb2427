//! Link-prediction reports and semantic-similarity correlation.

use kgbridge_core::bridge::{BridgeConfig, BridgeModel, Condition};
use kgbridge_core::encoder::{encode_all, EmbeddingCache, EncoderSpec, ImportTable};
use kgbridge_core::eval::{
    evaluate_link_prediction, semantic_similarity_eval, transformed_similarity, BridgeScorer, EvalOptions,
};
use kgbridge_core::graph::KnowledgeGraph;
use kgbridge_core::index::build_index;
use kgbridge_core::kge::{kge_rank_tails, KgeFamily, KgeModel, KgeTrainConfig};
use kgbridge_core::negatives::known_positives;
use kgbridge_core::planted::{generate_planted_kg, PlantedKgSpec, PlantedModality};
use kgbridge_core::rng::seeded;
use kgbridge_core::trainer::modality_layout;
use rand::Rng;

fn fixture() -> (KnowledgeGraph, EmbeddingCache, BridgeModel<f32>) {
    let mut spec = PlantedKgSpec::small(3);
    for m in &mut spec.modalities {
        *m = PlantedModality {
            label: m.label.clone(),
            size: 50,
        };
    }
    let p = generate_planted_kg(&spec).unwrap();
    let specs = vec![EncoderSpec::latent("alpha", 8), EncoderSpec::latent("beta", 8)];
    let cache = encode_all(&p.graph, &specs, &ImportTable::new()).unwrap();
    let cfg = BridgeConfig {
        d: 16,
        layers: 1,
        heads: 2,
        seed: 8,
        ..BridgeConfig::default()
    };
    let mut model = BridgeModel::<f32>::new(
        cfg,
        &modality_layout(&p.graph, &cache).unwrap(),
        p.graph.relation_vocab(),
    )
    .unwrap();
    let mut rng = seeded(2);
    for slot in 0..model.params.len() {
        for x in model.params.get_mut(slot).data_mut() {
            *x += rng.gen_range(-0.2f32..0.2);
        }
    }
    (p.graph, cache, model)
}

#[test]
fn bridge_ranks_match_index_oracle_raw_and_filtered() {
    let (kg, cache, model) = fixture();
    let test: Vec<_> = kg.resolved().iter().step_by(5).copied().collect();
    let known = known_positives(kg.resolved());
    let scorer = BridgeScorer {
        model: &model,
        cache: &cache,
    };
    let tails: Vec<&_> = kg.nodes().iter().filter(|n| n.modality == "beta").collect();
    let index = build_index(&tails, &cache, Some(&model)).unwrap();
    for filtered in [false, true] {
        let opts = EvalOptions {
            filtered,
            ..EvalOptions::default()
        };
        let report = evaluate_link_prediction(&scorer, &kg, &test, &known, &opts).unwrap();
        assert_eq!(report.ranks.len(), test.len());
        assert_eq!(report.tasks.len(), 1);
        assert_eq!(report.tasks[0].candidates, 50);
        for (t, &rank) in test.iter().zip(&report.ranks) {
            let head = kg.node(t.head);
            let cond = Condition {
                head_modality: 0,
                tail_modality: 1,
                relation: 0,
            };
            let q: Vec<f64> = model
                .bridge_rows(&[cache.require(&head.id).unwrap()], cond)
                .unwrap()
                .row(0)
                .iter()
                .map(|&x| x as f64)
                .collect();
            let scores = index.scores(&q).unwrap();
            let target = index.position(&kg.node(t.tail).id).unwrap();
            let skip = |i: usize| {
                filtered
                    && i != target
                    && known[&(t.head, t.relation)]
                        .iter()
                        .any(|&k| kg.node(k).id == index.ids()[i])
            };
            // the index orders ties by id and candidates are id-sorted, so
            // both tie-breaks agree
            let want = 1
                + (0..scores.len())
                    .filter(|&i| i != target && !skip(i))
                    .filter(|&i| scores[i] > scores[target] || (scores[i] == scores[target] && i < target))
                    .count();
            assert_eq!(rank, want, "filtered={filtered}");
        }
        let mrr = report.ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / report.ranks.len() as f64;
        assert!((report.mrr() - mrr).abs() < 1e-12);
        let hit10 = report.ranks.iter().filter(|&&r| r <= 10).count() as f64 / report.ranks.len() as f64;
        assert!((report.hit(10).unwrap() - hit10).abs() < 1e-12);
    }
}

#[test]
fn filtering_never_worsens_a_rank() {
    let (kg, cache, model) = fixture();
    let test: Vec<_> = kg.resolved().to_vec();
    let known = known_positives(kg.resolved());
    let scorer = BridgeScorer {
        model: &model,
        cache: &cache,
    };
    let raw = evaluate_link_prediction(
        &scorer,
        &kg,
        &test,
        &known,
        &EvalOptions {
            filtered: false,
            ..Default::default()
        },
    )
    .unwrap();
    let fil = evaluate_link_prediction(&scorer, &kg, &test, &known, &EvalOptions::default()).unwrap();
    assert!(raw.ranks.iter().zip(&fil.ranks).all(|(r, f)| f <= r));
    assert!(fil.mrr() >= raw.mrr());
}

#[test]
fn kge_scorer_agrees_with_rank_tails() {
    let (kg, _, _) = fixture();
    let m = KgeModel::new(
        KgeFamily::DistMult,
        &kg,
        KgeTrainConfig {
            d_e: 8,
            d_r: 8,
            seed: 1,
            ..KgeTrainConfig::default()
        },
    )
    .unwrap();
    let test: Vec<_> = kg.resolved().iter().take(30).copied().collect();
    let known = known_positives(kg.resolved());
    let report = evaluate_link_prediction(&m, &kg, &test, &known, &EvalOptions::default()).unwrap();
    let beta: Vec<usize> = (0..kg.nodes().len())
        .filter(|&i| kg.node(i).modality == "beta")
        .collect();
    for (t, &rank) in test.iter().zip(&report.ranks) {
        let mut filter = known[&(t.head, t.relation)].clone();
        filter.remove(&t.tail);
        let order = kge_rank_tails(&m, t.head, t.relation, &beta, &filter).unwrap();
        assert_eq!(order.iter().position(|(c, _)| *c == t.tail).unwrap() + 1, rank);
    }
}

#[test]
fn gold_equal_to_prediction_gives_unit_correlation() {
    let (kg, cache, model) = fixture();
    let ids: Vec<&str> = kg
        .nodes()
        .iter()
        .filter(|n| n.modality == "alpha")
        .map(|n| n.id.as_str())
        .take(30)
        .collect();
    let pred = transformed_similarity(&model, &cache, &ids, "alpha", "beta", "maps_to").unwrap();
    let out = semantic_similarity_eval(
        &model,
        &cache,
        &ids,
        "alpha",
        "maps_to",
        &[("beta".into(), pred.clone())],
    )
    .unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].pairs, 30 * 29 / 2);
    assert!((out[0].spearman - 1.0).abs() < 1e-12);

    // a strictly decreasing function of distance ranks pairs identically
    let mut neg = pred.clone();
    neg.data_mut().iter_mut().for_each(|x| *x = -(-*x).sqrt());
    let out = semantic_similarity_eval(&model, &cache, &ids, "alpha", "maps_to", &[("beta".into(), neg)]).unwrap();
    assert!((out[0].spearman - 1.0).abs() < 1e-12);

    let wrong_shape = kgbridge_core::tensor::Tensor::zeros(&[3, 3]);
    assert!(semantic_similarity_eval(
        &model,
        &cache,
        &ids,
        "alpha",
        "maps_to",
        &[("beta".into(), wrong_shape)]
    )
    .is_err());
}
