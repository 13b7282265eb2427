//! Graph statistics and stratified splits checked by recounting.

use std::collections::BTreeMap;

use kgbridge_core::graph::{graph_stats, KnowledgeGraph, Node, Triple};
use kgbridge_core::rng::seeded;
use kgbridge_core::split::{split_triples, SplitRatios};
use proptest::prelude::*;
use rand::Rng;

const MODALITIES: [&str; 3] = ["protein", "drug", "disease"];
const RELATIONS: [&str; 4] = ["ppi", "target", "indication", "side_effect"];

fn random_graph(seed: u64) -> KnowledgeGraph {
    let mut rng = seeded(seed);
    let n = rng.gen_range(10..80);
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node::new(format!("v{i}"), MODALITIES[rng.gen_range(0..3)], format!("feature {i}")))
        .collect();
    let edges = rng.gen_range(1..400);
    let mut seen = std::collections::BTreeSet::new();
    let mut triples = Vec::new();
    for _ in 0..edges {
        let (h, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let r = RELATIONS[rng.gen_range(0..4)];
        if h != t && seen.insert((h, r, t)) {
            triples.push(Triple::new(format!("v{h}"), r, format!("v{t}")));
        }
    }
    KnowledgeGraph::new(nodes, triples, None, None).unwrap()
}

fn key(kg: &KnowledgeGraph, t: &Triple) -> (String, String, String) {
    let m = |id: &str| kg.node_by_id(id).unwrap().modality.clone();
    (m(&t.head), t.relation.clone(), m(&t.tail))
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

#[test]
fn split_is_a_partition_on_random_graphs() {
    for seed in 0..10 {
        let kg = random_graph(seed);
        let ratios = SplitRatios::new(0.7, 0.15, 0.15).unwrap();
        let split = split_triples(&kg, ratios, seed).unwrap();

        let mut seen: BTreeMap<&Triple, usize> = BTreeMap::new();
        for t in split.train.iter().chain(&split.valid).chain(&split.test) {
            *seen.entry(t).or_default() += 1;
        }
        assert_eq!(seen.len(), kg.triples().len());
        assert!(seen.values().all(|&c| c == 1));
        assert!(kg.triples().iter().all(|t| seen.contains_key(t)));

        let mut per: BTreeMap<(String, String, String), [usize; 3]> = BTreeMap::new();
        for (part, list) in [&split.train, &split.valid, &split.test].into_iter().enumerate() {
            for t in list {
                per.entry(key(&kg, t)).or_default()[part] += 1;
            }
        }
        for (k, [tr, va, te]) in &per {
            let n = tr + va + te;
            if n < 3 {
                assert_eq!((*va, *te), (0, 0), "{k:?}");
                assert!(split.warnings.iter().any(|w| w.size == n && w.relation == k.1));
                continue;
            }
            assert!((*va as f64 - n as f64 * 0.15).abs() <= 1.0, "{k:?}");
            assert!((*te as f64 - n as f64 * 0.15).abs() <= 1.0, "{k:?}");
            assert!((*tr as f64 - n as f64 * 0.7).abs() <= 1.0, "{k:?}");
        }
        let reported: usize = split.strata.iter().map(|s| s.train + s.valid + s.test).sum();
        assert_eq!(reported, kg.triples().len());

        let again = split_triples(&kg, ratios, seed).unwrap();
        assert_eq!(split, again);
    }
}

#[test]
fn ten_triples_split_eight_one_one() {
    let nodes: Vec<Node> = (0..11).map(|i| Node::new(format!("p{i}"), "protein", "MKT")).collect();
    let triples = (0..10)
        .map(|i| Triple::new(format!("p{i}"), "ppi", format!("p{}", i + 1)))
        .collect();
    let kg = KnowledgeGraph::new(nodes, triples, None, None).unwrap();
    let s = split_triples(&kg, SplitRatios::default(), 7).unwrap();
    assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
}

#[test]
fn two_strata_fixture_recount() {
    let mut nodes: Vec<Node> = (0..40).map(|i| Node::new(format!("p{i}"), "protein", "MKT")).collect();
    nodes.extend((0..40).map(|i| Node::new(format!("d{i}"), "drug", "CCO")));
    let mut triples = Vec::new();
    for i in 0..63 {
        triples.push(Triple::new(
            format!("p{}", i % 40),
            "ppi",
            format!("p{}", (i * 7 + 1 + i / 40) % 40),
        ));
    }
    triples.sort();
    triples.dedup();
    triples.retain(|t| t.head != t.tail);
    let ppi = triples.len();
    for i in 0..(100 - ppi) {
        triples.push(Triple::new(
            format!("d{}", i % 40),
            "target",
            format!("p{}", (i * 3) % 40),
        ));
    }
    let kg = KnowledgeGraph::new(nodes, triples, None, None).unwrap();
    assert_eq!(kg.triples().len(), 100);
    let s = split_triples(&kg, SplitRatios::default(), 3).unwrap();
    for rel in ["ppi", "target"] {
        let n = kg.triples().iter().filter(|t| t.relation == rel).count() as f64;
        let count = |v: &[Triple]| v.iter().filter(|t| t.relation == rel).count() as f64;
        assert!((count(&s.train) - 0.8 * n).abs() <= 1.0);
        assert!((count(&s.valid) - 0.1 * n).abs() <= 1.0);
        assert!((count(&s.test) - 0.1 * n).abs() <= 1.0);
        assert_eq!(count(&s.valid) as usize, round_half_up(0.1 * n));
    }
}

#[test]
fn stats_recount() {
    for seed in 20..25 {
        let kg = random_graph(seed);
        let stats = graph_stats(&kg);
        assert_eq!(stats.total_nodes, kg.nodes().len());
        assert_eq!(stats.total_triples, kg.triples().len());
        let mut nodes: BTreeMap<&str, usize> = BTreeMap::new();
        for n in kg.nodes() {
            *nodes.entry(n.modality.as_str()).or_default() += 1;
        }
        for m in &stats.nodes {
            assert_eq!(nodes.get(m.modality.as_str()).copied().unwrap_or(0), m.nodes);
        }
        assert_eq!(stats.nodes.iter().map(|m| m.nodes).sum::<usize>(), kg.nodes().len());
        let mut strata: BTreeMap<(String, String, String), usize> = BTreeMap::new();
        for t in kg.triples() {
            *strata.entry(key(&kg, t)).or_default() += 1;
        }
        assert_eq!(stats.strata.len(), strata.len());
        for s in &stats.strata {
            let k = (s.head_modality.clone(), s.relation.clone(), s.tail_modality.clone());
            assert_eq!(strata[&k], s.triples);
        }
    }
}

#[test]
fn empty_graph_has_zero_stats() {
    let kg = KnowledgeGraph::new(vec![], vec![], None, None).unwrap();
    let s = graph_stats(&kg);
    assert_eq!((s.total_nodes, s.total_triples), (0, 0));
    assert!(s.strata.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_partitions_for_any_ratios(seed in 0u64..1000, a in 1u32..20, b in 1u32..20, c in 1u32..20) {
        let kg = random_graph(seed);
        let sum = (a + b + c) as f64;
        let ratios = SplitRatios::new(a as f64 / sum, b as f64 / sum, 1.0 - a as f64 / sum - b as f64 / sum);
        prop_assume!(ratios.is_ok());
        let s = split_triples(&kg, ratios.unwrap(), seed).unwrap();
        let mut all: Vec<&Triple> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
        all.sort();
        let mut want: Vec<&Triple> = kg.triples().iter().collect();
        want.sort();
        prop_assert_eq!(all, want);
    }
}
