//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if an enforced criterion fails.
//!
//! Two checks are reported but not enforced: the loss half of the ablation
//! direction (a soft check) and TransE Hit@1 on a closed 8-cycle, which no
//! TransE embedding can reach (at most 7 of 8 successors can rank first).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use kgbridge::bench::{planted_image_similarity, run_planted_bench, PlantedBench, PlantedPreset};
use kgbridge::cache::{decode_cache, encode_cache};
use kgbridge::checkpoint::{decode, encode_bridge, SavedModel};
use kgbridge::core::bridge::{BridgeConfig, BridgeModel, ProjectionKind, Variant};
use kgbridge::core::encoder::{encode_all, CacheBlock, EmbeddingCache, EncoderSpec, ImportTable};
use kgbridge::core::eval::{semantic_similarity_eval, transformed_similarity};
use kgbridge::core::gradcheck::finite_difference_check;
use kgbridge::core::graph::{KnowledgeGraph, Node, Triple, TripleIx};
use kgbridge::core::index::{build_index, EmbeddingIndex};
use kgbridge::core::kge::{kge_rank_tails, train_kge, KgeFamily, KgeTrainConfig};
use kgbridge::core::loss::info_nce;
use kgbridge::core::metrics::{
    average_ranks, expected_random_mrr, hit_at_k, mrr, ndcg_at_k, precision_recall_at_k, spearman,
};
use kgbridge::core::negatives::sample_negatives;
use kgbridge::core::params::ParamStore;
use kgbridge::core::planted::{generate_planted_kg, PlantedKgSpec, PlantedModality};
use kgbridge::core::prompt::{assemble_prompt, PromptBundle};
use kgbridge::core::rng::{gaussian, seeded};
use kgbridge::core::split::{split_triples, SplitRatios};
use kgbridge::core::trainer::{batch_loss, batch_loss_and_grads, modality_layout, prepare_batch};
use kgbridge::error::read_json;
use kgbridge::tsv::load_graph;
use rand::seq::SliceRandom;
use rand::Rng;

/// Outcome of one criterion: failed sub-checks, facts worth printing and
/// sub-checks that are reported without being enforced.
#[derive(Default)]
struct Verdict {
    failures: Vec<String>,
    soft_failures: Vec<String>,
    notes: Vec<String>,
}

impl Verdict {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn soft(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.soft_failures.push(what.into());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn pass(&self) -> bool {
        self.failures.is_empty() && self.soft_failures.is_empty()
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn perturb<T: kgbridge::core::Real>(m: &mut BridgeModel<T>, seed: u64, scale: f64) {
    let mut rng = seeded(seed);
    for slot in 0..m.params.len() {
        for x in m.params.get_mut(slot).data_mut() {
            *x += T::from_f64(rng.gen_range(-scale..scale));
        }
    }
}

// 1 ---------------------------------------------------------------------

fn gradient_fidelity() -> Verdict {
    let mut v = Verdict::default();
    let t0 = Instant::now();
    let mut spec = PlantedKgSpec::small(5);
    for m in &mut spec.modalities {
        *m = PlantedModality {
            label: m.label.clone(),
            size: 20,
        };
    }
    let p = generate_planted_kg(&spec).unwrap();
    let kg = p.graph;
    let cache = encode_all(
        &kg,
        &[EncoderSpec::latent("alpha", 8), EncoderSpec::latent("beta", 8)],
        &ImportTable::new(),
    )
    .unwrap();
    let cfg = BridgeConfig {
        d: 8,
        layers: 2,
        heads: 2,
        ff_mult: 2,
        variant: Variant::ResidualAdditive,
        projection_kind: ProjectionKind::Linear,
        seed: 17,
    };
    let mut model = BridgeModel::<f64>::new(cfg, &modality_layout(&kg, &cache).unwrap(), kg.relation_vocab()).unwrap();
    perturb(&mut model, 99, 0.3);
    let triples: Vec<TripleIx> = kg.resolved().iter().step_by(7).take(6).copied().collect();
    let mut rng = seeded(3);
    let negs: Vec<Vec<usize>> = triples
        .iter()
        .map(|&t| sample_negatives(t, &kg, 4, &mut rng).unwrap().tails)
        .collect();
    let batch = prepare_batch(&kg, &model, &cache, &triples, &negs, None).unwrap();
    let tau = 0.07;
    let (_, grads) = batch_loss_and_grads(&model, &batch, tau).unwrap();

    // attention key biases have an identically zero gradient; checked as zeros
    let mut sampled = ParamStore::<f64>::new();
    let mut sampled_grads = Vec::new();
    let mut back = Vec::new();
    let mut max_bk = 0f64;
    for (slot, (name, t)) in model.params.iter().enumerate() {
        if name.ends_with("attn.bk") {
            max_bk = grads[slot].data().iter().fold(max_bk, |a, g| a.max(g.abs()));
            continue;
        }
        sampled.add(name, t.clone());
        sampled_grads.push(grads[slot].clone());
        back.push(slot);
    }
    let rebuild = |p: &ParamStore<f64>| {
        let mut full = model.params.clone();
        for (i, &slot) in back.iter().enumerate() {
            *full.get_mut(slot) = p.get(i).clone();
        }
        full
    };
    let report = finite_difference_check(
        |p| batch_loss(&model.with_params(rebuild(p)), &batch, tau),
        &sampled,
        &sampled_grads,
        1e-5,
        400,
        11,
    )
    .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    v.check(
        report.coordinates >= 200,
        format!("only {} coordinates", report.coordinates),
    );
    v.check(
        report.max_rel_err <= 1e-4,
        format!("max rel err {:.2e} at {:?}", report.max_rel_err, report.worst),
    );
    v.check(max_bk < 1e-12, format!("key-bias gradient {max_bk:.1e}"));
    v.check(secs < 60.0, format!("{secs:.1} s"));
    v.note(format!(
        "max rel err {:.2e} over {} coords, {secs:.1} s",
        report.max_rel_err, report.coordinates
    ));
    v
}

// 2 ---------------------------------------------------------------------

fn loss_calibration() -> Verdict {
    let mut v = Verdict::default();
    let mut rng = seeded(2024);
    let (d, m, batch) = (64, 31, 64);
    let mut means = Vec::new();
    for _ in 0..100 {
        let mut sum = 0.0;
        for _ in 0..batch {
            let h = unit(&mut rng, d);
            let pos = unit(&mut rng, d);
            let negs: Vec<Vec<f64>> = (0..m).map(|_| unit(&mut rng, d)).collect();
            sum += info_nce(&h, &pos, &negs, 1.0).unwrap();
        }
        means.push(sum / batch as f64);
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let ln32 = 32f64.ln();
    v.check((mean - ln32).abs() <= 0.5, format!("mean loss {mean:.4}"));
    let mut worst = 0f64;
    for tau in [0.05, 0.07, 1.0] {
        for _ in 0..20 {
            let h = unit(&mut rng, d);
            let z = unit(&mut rng, d);
            let l = info_nce(&h, &z, &vec![z.clone(); m], tau).unwrap();
            worst = worst.max((l - ln32).abs());
        }
    }
    v.check(worst < 1e-6, format!("equal-logit deviation {worst:.1e}"));
    v.note(format!(
        "mean {mean:.4} vs ln 32 = {ln32:.4}, equal-logit deviation {worst:.1e}"
    ));
    v
}

// 3, 4, 10 --------------------------------------------------------------

struct PlantedRuns {
    residual: PlantedBench,
    no_residual: PlantedBench,
    rotate: PlantedBench,
    secs: f64,
}

fn planted_runs() -> PlantedRuns {
    let preset = PlantedPreset::small(13);
    let run = |variant: Variant| {
        let t0 = Instant::now();
        let b = run_planted_bench(&preset.clone().with_variant(variant), &mut |_| {}).unwrap();
        (b, t0.elapsed().as_secs_f64())
    };
    let ((residual, secs), (no_residual, _), (rotate, _)) = std::thread::scope(|s| {
        let a = s.spawn(|| run(Variant::ResidualAdditive));
        let b = s.spawn(|| run(Variant::NoResidual));
        let c = s.spawn(|| run(Variant::RotateMultiplicative));
        (a.join().unwrap(), b.join().unwrap(), c.join().unwrap())
    });
    PlantedRuns {
        residual,
        no_residual,
        rotate,
        secs,
    }
}

fn planted_learning(r: &PlantedRuns) -> Verdict {
    let mut v = Verdict::default();
    let b = &r.residual;
    let random = expected_random_mrr(300);
    let mrr = b.report.mrr();
    let hit10 = b.report.hit(10).unwrap_or(0.0);
    v.check(b.candidates == 300, format!("{} candidates", b.candidates));
    v.check((b.random_mrr - random).abs() < 1e-15, "random MRR");
    v.check(mrr >= 5.0 * random, format!("MRR {mrr:.4} < 5 x {random:.4}"));
    v.check(hit10 >= 0.5, format!("Hit@10 {hit10:.3}"));
    v.check(r.secs < 600.0, format!("{:.0} s", r.secs));
    v.note(format!(
        "MRR {mrr:.3} ({:.1} x random {random:.4}), Hit@10 {hit10:.3}, {:.1} s",
        mrr / random,
        r.secs
    ));
    v
}

fn ablation_direction(r: &PlantedRuns) -> Verdict {
    let mut v = Verdict::default();
    let (res, nores) = (r.residual.outcome.final_loss, r.no_residual.outcome.final_loss);
    let (res_mrr, rot_mrr) = (r.residual.report.mrr(), r.rotate.report.mrr());
    v.soft(
        res < nores,
        format!("final loss residual {res:.4} >= no-residual {nores:.4}"),
    );
    v.check(
        res_mrr >= rot_mrr,
        format!("MRR residual {res_mrr:.3} < rotate {rot_mrr:.3}"),
    );
    v.note(format!(
        "final loss residual {res:.4} / no-residual {nores:.4}; MRR residual {res_mrr:.3} / rotate {rot_mrr:.3}"
    ));
    v
}

fn semantic_similarity(r: &PlantedRuns) -> Verdict {
    let mut v = Verdict::default();

    // gold equal to prediction, two aspects on the biomedical fixture
    let kg = load_graph(&fixture("nodes.tsv"), &fixture("triples.tsv")).unwrap();
    let specs: Vec<EncoderSpec> = read_json(&fixture("encoders.json")).unwrap();
    let cache = encode_all(&kg, &specs, &ImportTable::new()).unwrap();
    let cfg = BridgeConfig {
        d: 16,
        layers: 1,
        heads: 2,
        seed: 6,
        ..BridgeConfig::default()
    };
    let mut model = BridgeModel::<f32>::new(cfg, &modality_layout(&kg, &cache).unwrap(), kg.relation_vocab()).unwrap();
    perturb(&mut model, 6, 0.2);
    let drugs: Vec<&str> = kg
        .nodes()
        .iter()
        .filter(|n| n.modality == "drug")
        .map(|n| n.id.as_str())
        .collect();
    let gold: Vec<(String, _)> = ["protein", "disease"]
        .iter()
        .map(|m| {
            (
                m.to_string(),
                transformed_similarity(&model, &cache, &drugs, "drug", m, "target").unwrap(),
            )
        })
        .collect();
    let out = semantic_similarity_eval(&model, &cache, &drugs, "drug", "target", &gold).unwrap();
    v.check(out.len() == 2, "aspect count");
    for a in &out {
        v.check(a.spearman == 1.0, format!("{}: rho {}", a.aspect, a.spearman));
    }

    // planted preset: bridged Manhattan similarity against the planted images
    let planted = &r.residual.data.planted;
    let ids: Vec<&str> = planted
        .graph
        .nodes()
        .iter()
        .filter(|n| n.modality == "alpha")
        .map(|n| n.id.as_str())
        .collect();
    let gold = planted_image_similarity(planted, "maps_to", &ids).unwrap();
    let rho = semantic_similarity_eval(
        &r.residual.outcome.last.model,
        &r.residual.data.cache,
        &ids,
        "alpha",
        "maps_to",
        &[("beta".into(), gold)],
    )
    .unwrap()[0]
        .spearman;
    v.check(rho >= 0.5, format!("planted rho {rho:.3}"));
    v.note(format!("gold = prediction rho 1.0 on 2 aspects, planted rho {rho:.3}"));
    v
}

// 5 ---------------------------------------------------------------------

fn kge_graph(n: usize, relations: usize, edges: usize, seed: u64) -> KnowledgeGraph {
    let mut rng = seeded(seed);
    let nodes = (0..n).map(|i| Node::new(format!("e{i:03}"), "entity", "x")).collect();
    let mut seen = BTreeSet::new();
    let mut triples = Vec::new();
    while triples.len() < edges {
        let (h, r, t) = (rng.gen_range(0..n), rng.gen_range(0..relations), rng.gen_range(0..n));
        if h != t && seen.insert((h, r, t)) {
            triples.push(Triple::new(format!("e{h:03}"), format!("r{r}"), format!("e{t:03}")));
        }
    }
    KnowledgeGraph::new(nodes, triples, None, None).unwrap()
}

fn kge_config(d: usize, epochs: usize, seed: u64) -> KgeTrainConfig {
    KgeTrainConfig {
        d_e: d,
        d_r: d,
        epochs,
        negatives: 4,
        batch_size: 8,
        seed,
        ..KgeTrainConfig::default()
    }
}

fn kge_sanity() -> Verdict {
    let mut v = Verdict::default();

    let t0 = Instant::now();
    let nodes = (0..8).map(|i| Node::new(format!("n{i}"), "entity", "x")).collect();
    let triples = (0..8)
        .map(|i| Triple::new(format!("n{i}"), "next", format!("n{}", (i + 1) % 8)))
        .collect();
    let cycle = KnowledgeGraph::new(nodes, triples, None, None).unwrap();
    let (model, _) = train_kge(
        &cycle,
        cycle.resolved(),
        KgeFamily::TransE,
        &kge_config(16, 200, 1),
        &mut |_, _| {},
    )
    .unwrap();
    let all: Vec<usize> = (0..8).collect();
    let hits = cycle
        .resolved()
        .iter()
        .filter(|t| kge_rank_tails(&model, t.head, t.relation, &all, &BTreeSet::new()).unwrap()[0].0 == t.tail)
        .count();
    let secs = t0.elapsed().as_secs_f64();
    let hit1 = hits as f64 / 8.0;
    v.soft(hit1 >= 0.9, format!("TransE cycle Hit@1 {hit1:.3} (bound 7/8)"));
    v.check(secs < 30.0, format!("TransE {secs:.1} s"));

    let kg = kge_graph(60, 3, 200, 4);
    let (dm, _) = train_kge(
        &kg,
        kg.resolved(),
        KgeFamily::DistMult,
        &kge_config(16, 3, 2),
        &mut |_, _| {},
    )
    .unwrap();
    let mut rng = seeded(5);
    let (mut h, mut r, mut t) = (vec![], vec![], vec![]);
    for _ in 0..1000 {
        h.push(rng.gen_range(0..60));
        r.push(rng.gen_range(0..3));
        t.push(rng.gen_range(0..60));
    }
    let symmetric = dm.score_many(&h, &r, &t).unwrap() == dm.score_many(&t, &r, &h).unwrap();
    v.check(symmetric, "DistMult asymmetric");

    let kg = kge_graph(40, 4, 150, 6);
    let mut worst = 0f64;
    let mut epochs = 0;
    train_kge(
        &kg,
        kg.resolved(),
        KgeFamily::RotatE,
        &kge_config(8, 25, 3),
        &mut |_, m| {
            epochs += 1;
            for r in 0..m.relations.len() {
                for (re, im) in m.rotation(r).unwrap() {
                    worst = worst.max(((re * re + im * im).sqrt() - 1.0).abs());
                }
            }
        },
    )
    .unwrap();
    v.check(
        epochs == 25 && worst <= 1e-6,
        format!("RotatE modulus deviation {worst:.1e}"),
    );
    v.note(format!(
        "TransE cycle Hit@1 {hit1:.3} in {secs:.1} s; DistMult symmetric on 1000; RotatE |r| deviation {worst:.1e}"
    ));
    v
}

// 6 ---------------------------------------------------------------------

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn metric_oracles() -> Verdict {
    let mut v = Verdict::default();
    let mut rng = seeded(31);
    let mut bad_order = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let d = rng.gen_range(2..9);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for _ in 0..n {
            if !rows.is_empty() && rng.gen_bool(0.2) {
                let r = rows[rng.gen_range(0..rows.len())].clone();
                rows.push(r);
            } else {
                rows.push(unit(&mut rng, d));
            }
        }
        let mut ids: Vec<String> = (0..n).map(|i| format!("e{:03}", i * 7 % 101)).collect();
        ids.shuffle(&mut rng);
        let query = unit(&mut rng, d);
        let mut oracle: Vec<(String, f64)> = ids
            .iter()
            .zip(&rows)
            .map(|(id, r)| (id.clone(), r.iter().zip(&query).map(|(a, b)| a * b).sum()))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let index = EmbeddingIndex::new("m", ids, d, rows.concat()).unwrap();
        let k = rng.gen_range(1..n + 3);
        let got = index.top_k(&query, k).unwrap();
        let same = got
            .hits
            .iter()
            .map(|h| h.id.as_str())
            .eq(oracle.iter().take(k).map(|o| o.0.as_str()));
        let ranks_ok = oracle
            .iter()
            .enumerate()
            .all(|(pos, (id, _))| index.rank_of_target(&query, id, None).unwrap() == pos + 1);
        if !same || !ranks_ok {
            bad_order += 1;
        }
    }
    v.check(bad_order == 0, format!("{bad_order} index instances disagree"));

    let mut worst = 0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let ranks: Vec<usize> = (0..n).map(|_| rng.gen_range(1..50)).collect();
        let k = rng.gen_range(1..20);
        let recip = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64;
        let hits = ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
        worst = worst.max((mrr(&ranks).unwrap() - recip).abs());
        worst = worst.max((hit_at_k(&ranks, k).unwrap() - hits).abs());

        let mut retrieved: Vec<u32> = (0..30).collect();
        retrieved.shuffle(&mut rng);
        retrieved.truncate(rng.gen_range(0..30));
        let relevant: BTreeSet<u32> = (0..30).filter(|_| rng.gen_bool(0.3)).collect();
        if !relevant.is_empty() {
            let found = retrieved.iter().take(k).filter(|x| relevant.contains(x)).count() as f64;
            let (p, r) = precision_recall_at_k(&retrieved, &relevant, k).unwrap();
            worst = worst
                .max((p - found / k as f64).abs())
                .max((r - found / relevant.len() as f64).abs());
        }
        let mut graded: BTreeMap<u32, f64> = BTreeMap::new();
        for i in 0..30 {
            if rng.gen_bool(0.4) {
                graded.insert(i, rng.gen_range(0..4) as f64);
            }
        }
        let dcg: f64 = retrieved
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, id)| graded.get(id).copied().unwrap_or(0.0) / ((i + 2) as f64).log2())
            .sum();
        let mut ideal: Vec<f64> = graded.values().copied().collect();
        ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, g)| g / ((i + 2) as f64).log2())
            .sum();
        let want = if idcg > 0.0 { dcg / idcg } else { 0.0 };
        worst = worst.max((ndcg_at_k(&retrieved, &graded, k) - want).abs());
    }
    v.check(worst <= 1e-9, format!("ranking metric deviation {worst:.1e}"));

    let mut rho_worst = 0f64;
    let mut not_invariant = 0;
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(2..40);
        let tied = rng.gen_bool(0.5);
        let mut draw = || {
            let x: f64 = rng.gen_range(-3.0..3.0);
            if tied {
                x.round()
            } else {
                x
            }
        };
        let pred: Vec<f64> = (0..n).map(|_| draw()).collect();
        let gold: Vec<f64> = (0..n).map(|_| draw()).collect();
        let (rp, rg) = (oracle_ranks(&pred), oracle_ranks(&gold));
        let constant = |r: &[f64]| r.iter().all(|x| *x == r[0]);
        if constant(&rp) || constant(&rg) {
            continue;
        }
        rho_worst = rho_worst.max(
            average_ranks(&pred)
                .iter()
                .zip(&rp)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        let rho = spearman(&pred, &gold).unwrap();
        rho_worst = rho_worst.max((rho - oracle_pearson(&rp, &rg)).abs());
        let bent: Vec<f64> = pred.iter().map(|x| x * x * x + x + 5.0).collect();
        if spearman(&bent, &gold).unwrap() != rho {
            not_invariant += 1;
        }
        checked += 1;
    }
    v.check(rho_worst <= 1e-9, format!("spearman deviation {rho_worst:.1e}"));
    v.check(not_invariant == 0, format!("{not_invariant} transform mismatches"));
    v.note(format!(
        "1000 index instances exact, metric deviation {worst:.1e}, spearman deviation {rho_worst:.1e}"
    ));
    v
}

// 7 ---------------------------------------------------------------------

fn normalization_bounds() -> Verdict {
    let mut v = Verdict::default();
    let tol = 1e-6;
    let mut worst_norm = 0f64;
    let mut worst_score = f64::NEG_INFINITY;
    let mut queries = 0;
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (variant, seed) in [
        (Variant::ResidualAdditive, 1),
        (Variant::NoResidual, 2),
        (Variant::RotateMultiplicative, 3),
    ] {
        let cfg = BridgeConfig {
            d: 16,
            layers: 2,
            heads: 4,
            ff_mult: 2,
            variant,
            projection_kind: ProjectionKind::TwoLayer,
            seed,
        };
        let mut m = BridgeModel::<f32>::new(cfg, &[("a".into(), 10), ("b".into(), 6)], &["r".into()]).unwrap();
        perturb(&mut m, seed ^ 0xabc, 0.5);
        let mut rng = seeded(seed);
        let rows = raw(&mut rng, 200, 6);
        let cache = EmbeddingCache::new(
            vec![CacheBlock {
                modality: "b".into(),
                raw_dim: 6,
                ids: (0..200).map(|i| format!("b{i:03}")).collect(),
                data: rows.concat(),
            }],
            [0; 32],
        )
        .unwrap();
        let nodes: Vec<Node> = cache.blocks()[0].ids.iter().map(|id| Node::new(id, "b", "x")).collect();
        let refs: Vec<&Node> = nodes.iter().collect();
        let index = build_index(&refs, &cache, Some(&m)).unwrap();
        for i in 0..index.len() {
            worst_norm = worst_norm.max((norm(index.row(i)) - 1.0).abs());
        }
        let cond = m.condition("a", "b", "r").unwrap();
        // 34 batches of 1000 per variant, just over 10^5 queries in total
        for _ in 0..34 {
            let q = raw(&mut rng, 1000, 10);
            let qr: Vec<&[f32]> = q.iter().map(|r| r.as_slice()).collect();
            let out = m.bridge_rows(&qr, cond).unwrap();
            for i in 0..1000 {
                let q: Vec<f64> = out.row(i).iter().map(|&x| f64::from(x)).collect();
                worst_norm = worst_norm.max((norm(&q) - 1.0).abs());
                for s in index.scores(&q).unwrap() {
                    worst_score = worst_score.max(s.abs() - 1.0);
                }
                queries += 1;
            }
        }
    }
    v.check(queries >= 100_000, format!("{queries} queries"));
    v.check(worst_norm <= tol, format!("norm deviation {worst_norm:.1e}"));
    v.check(worst_score <= tol, format!("score excess {worst_score:.1e}"));
    v.note(format!(
        "{queries} queries, norm deviation {worst_norm:.1e}, |score| - 1 <= {:.1e}",
        worst_score.max(0.0)
    ));
    v
}

/// Raw rows spanning tiny, ordinary and large magnitudes.
fn raw(rng: &mut impl Rng, n: usize, w: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let s = [1e-3, 1.0, 50.0][rng.gen_range(0..3)];
            (0..w).map(|_| (gaussian(rng) * s) as f32).collect()
        })
        .collect()
}

// 8 ---------------------------------------------------------------------

fn random_graph(seed: u64) -> KnowledgeGraph {
    let mods = ["protein", "drug", "disease"];
    let rels = ["ppi", "target", "indication", "side_effect"];
    let mut rng = seeded(seed);
    let n = rng.gen_range(10..80);
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node::new(format!("v{i}"), mods[rng.gen_range(0..3)], format!("f{i}")))
        .collect();
    let mut seen = BTreeSet::new();
    let mut triples = Vec::new();
    for _ in 0..rng.gen_range(1..400) {
        let (h, r, t) = (rng.gen_range(0..n), rels[rng.gen_range(0..4)], rng.gen_range(0..n));
        if h != t && seen.insert((h, r, t)) {
            triples.push(Triple::new(format!("v{h}"), r, format!("v{t}")));
        }
    }
    KnowledgeGraph::new(nodes, triples, None, None).unwrap()
}

fn determinism(r: &PlantedRuns) -> Verdict {
    let mut v = Verdict::default();

    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = serde_json::json!({
                "paths": {
                    "nodes": fixture("nodes.tsv"),
                    "triples": fixture("triples.tsv"),
                    "checkpoint": dir.path().join("m.bbr"),
                    "output_dir": dir.path(),
                },
                "encoders": serde_json::from_slice::<serde_json::Value>(&std::fs::read(fixture("encoders.json")).unwrap()).unwrap(),
                "bridge": {"d": 16, "layers": 2, "heads": 2, "ff_mult": 2},
                "train": {"epochs": 3, "batch_size": 16, "negatives": 3},
                "seed": 21,
            });
            let path = dir.path().join("run.json");
            std::fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
            let argv = ["kgbridge", "--deterministic", "train-bridge", "--config", path.to_str().unwrap()];
            let code = kgbridge::cli::run(argv, &mut std::io::sink(), &mut std::io::sink());
            assert_eq!(code, 0);
            std::fs::read(dir.path().join("m.bbr")).unwrap()
        })
        .collect();
    v.check(runs[0] == runs[1], "two deterministic train-bridge runs differ");

    let ck = &r.residual.outcome.last;
    let bytes = encode_bridge(ck).unwrap();
    match decode(Path::new("planted.bbr"), &bytes).unwrap() {
        SavedModel::Bridge(back) => {
            v.check(back.content_hash() == ck.content_hash(), "checkpoint content changed");
            v.check(encode_bridge(&back).unwrap() == bytes, "checkpoint bytes changed");
        }
        SavedModel::Kge(_) => v.check(false, "checkpoint decoded as KGE"),
    }
    let cache = &r.residual.data.cache;
    let cbytes = encode_cache(cache);
    let back = decode_cache(Path::new("planted.emb"), &cbytes).unwrap();
    v.check(&back == cache && encode_cache(&back) == cbytes, "cache round trip");

    let mut partitions = 0;
    for seed in 0..10 {
        let kg = random_graph(seed);
        let s = split_triples(&kg, SplitRatios::new(0.7, 0.15, 0.15).unwrap(), seed).unwrap();
        let mut all: Vec<&Triple> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
        all.sort();
        let mut want: Vec<&Triple> = kg.triples().iter().collect();
        want.sort();
        if all == want {
            partitions += 1;
        }
    }
    v.check(partitions == 10, format!("{partitions}/10 splits are partitions"));
    v.note(format!(
        "checkpoints {} bytes identical, round trips exact, {partitions}/10 partitions",
        runs[0].len()
    ));
    v
}

// 9 ---------------------------------------------------------------------

fn prompt_fidelity() -> Verdict {
    let mut v = Verdict::default();
    for name in ["molecule_qa", "molecule_generation"] {
        let bundle: PromptBundle = read_json(&fixture(&format!("golden/{name}.json"))).unwrap();
        let want = std::fs::read(fixture(&format!("golden/{name}.txt"))).unwrap();
        let got = assemble_prompt(&bundle).unwrap();
        v.check(
            got.as_bytes() == want.as_slice(),
            format!("{name} differs from golden file"),
        );
    }
    v.note("molecule-qa and molecule-generation byte-identical");
    v
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let planted = planted_runs();
    let criteria: Vec<(&str, Verdict)> = vec![
        ("gradient fidelity", gradient_fidelity()),
        ("loss calibration", loss_calibration()),
        ("planted-KG learning", planted_learning(&planted)),
        ("ablation direction", ablation_direction(&planted)),
        ("KGE sanity", kge_sanity()),
        ("metric oracle equivalence", metric_oracles()),
        ("normalization and bounds", normalization_bounds()),
        ("determinism and round-trips", determinism(&planted)),
        ("prompt fidelity", prompt_fidelity()),
        ("semantic-similarity pipeline", semantic_similarity(&planted)),
    ];
    let mut enforced_failures = 0;
    for (i, (name, v)) in criteria.iter().enumerate() {
        let status = if v.pass() { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status} {name}: {}", i + 1, v.notes.join("; "));
        for f in &v.failures {
            println!("    failed: {f}");
        }
        for f in &v.soft_failures {
            println!("    not met (reported, not enforced): {f}");
        }
        enforced_failures += v.failures.len();
    }
    println!("acceptance finished in {:.1} s", t0.elapsed().as_secs_f64());
    if enforced_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
