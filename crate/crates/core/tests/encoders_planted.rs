//! Reference encoders and the planted generator against independent recomputation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use kgbridge_core::encoder::{
    encode, encode_all, fingerprint, ngram_bucket_counts, projection_row, EncoderSpec, ImportTable,
};
use kgbridge_core::graph::Node;
use kgbridge_core::planted::{generate_planted_kg, PlantedKgSpec, PlantedMap, PlantedModality, PlantedRelation};
use kgbridge_core::rng::seeded;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const BUCKETS: u64 = 1 << 16;

fn fnv(n: usize, gram: &str) -> u64 {
    let mut h = 14695981039346656037u64;
    for b in std::iter::once(n as u8).chain(gram.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(1099511628211);
    }
    h
}

/// N-gram multiset counted as strings, then hashed.
fn oracle_counts(text: &str, sizes: &[usize]) -> BTreeMap<usize, u32> {
    let chars: Vec<char> = text.chars().collect();
    let mut grams: HashMap<(usize, String), u32> = HashMap::new();
    for &n in sizes {
        for w in chars.windows(n) {
            *grams.entry((n, w.iter().collect())).or_default() += 1;
        }
    }
    let mut out = BTreeMap::new();
    for ((n, g), c) in grams {
        *out.entry((fnv(n, &g) % BUCKETS) as usize).or_default() += c;
    }
    out
}

fn oracle_vector(text: &str, sizes: &[usize], raw_dim: usize, seed: u64) -> Vec<f64> {
    let counts = oracle_counts(text, sizes);
    let norm = counts.values().map(|&c| f64::from(c).powi(2)).sum::<f64>().sqrt();
    let mut v = vec![0.0; raw_dim];
    for (b, c) in counts {
        for (x, g) in v.iter_mut().zip(projection_row(seed, b, raw_dim)) {
            *x += f64::from(c) / norm * g;
        }
    }
    v
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let n = |v: &[f32]| v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

#[test]
fn three_gram_vectors_match_oracle_and_differ() {
    let spec = EncoderSpec::hash_ngram("protein", vec![3], 64, 5);
    let a = encode(&Node::new("a", "protein", "ACDE"), &spec).unwrap();
    let b = encode(&Node::new("b", "protein", "ACDF"), &spec).unwrap();
    for (node, text) in [(&a, "ACDE"), (&b, "ACDF")] {
        let want = oracle_vector(text, &[3], 64, 5);
        for (x, y) in node.vector.iter().zip(&want) {
            assert!((f64::from(*x) - y).abs() < 1e-6);
        }
    }
    assert_ne!(a.vector, b.vector);
    let c = cosine(&a.vector, &b.vector);
    assert!(c < 1.0, "cosine {c}");
    // one shared 3-gram out of two: about 1/2 under a near-orthogonal projection
    assert!((c - 0.5).abs() < 0.3, "cosine {c}");
}

#[test]
fn bucket_counts_match_oracle_on_unicode_and_mixed_sizes() {
    let mut rng = seeded(3);
    let alphabet: Vec<char> = "ACDEFGHIKLMNPQRSTVWYcno()=#1234αβ".chars().collect();
    for _ in 0..300 {
        let len = rng.gen_range(3..60);
        let text: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        let sizes = [vec![1], vec![3], vec![2, 3], vec![3, 5, 7]][rng.gen_range(0..4)].clone();
        assert_eq!(
            ngram_bucket_counts(&text, &sizes),
            oracle_counts(&text, &sizes),
            "{text}"
        );
    }
}

#[test]
fn encoding_is_repeatable_and_rejects_short_features() {
    let spec = EncoderSpec::hash_ngram("text", vec![3, 4], 32, 9);
    let n = Node::new("t", "text", "kinase activity; catalysis of phosphate transfer");
    assert_eq!(encode(&n, &spec).unwrap(), encode(&n, &spec).unwrap());
    assert!(encode(&Node::new("s", "text", "ab"), &spec).is_err());
    assert!(encode(&Node::new("s", "drug", "CCO"), &spec).is_err());
    let latent = EncoderSpec::latent("m", 3);
    assert_eq!(
        encode(&Node::new("x", "m", "1.0,0.0,0.0"), &latent).unwrap().vector,
        vec![1.0, 0.0, 0.0]
    );
    assert!(encode(&Node::new("x", "m", "1.0,zero,0.0"), &latent).is_err());
    assert!(encode(&Node::new("x", "m", "1.0,0.0"), &latent).is_err());
}

#[test]
fn fingerprint_tracks_specs_not_their_order() {
    let a = EncoderSpec::hash_ngram("protein", vec![3], 64, 1);
    let b = EncoderSpec::latent("drug", 8);
    assert_eq!(
        fingerprint(&[a.clone(), b.clone()]),
        fingerprint(&[b.clone(), a.clone()])
    );
    let mut c = a.clone();
    c.seed = 2;
    assert_ne!(fingerprint(&[a, b.clone()]), fingerprint(&[c, b]));
}

fn small_spec(size: usize, noise: f64, map: PlantedMap, seed: u64) -> PlantedKgSpec {
    PlantedKgSpec {
        modalities: vec![
            PlantedModality {
                label: "alpha".into(),
                size,
            },
            PlantedModality {
                label: "beta".into(),
                size,
            },
        ],
        latent_dim: 8,
        relations: vec![PlantedRelation {
            name: "maps_to".into(),
            head_modality: "alpha".into(),
            tail_modality: "beta".into(),
            map,
        }],
        edges_per_head: 3,
        noise_scale: noise,
        seed,
    }
}

#[test]
fn noiseless_tails_are_exhaustive_nearest_neighbors() {
    let spec = small_spec(100, 0.0, PlantedMap::Gaussian { seed: 4 }, 21);
    let p = generate_planted_kg(&spec).unwrap();
    assert_eq!(p.graph.triples().len(), 300);
    let a = &p.maps["maps_to"];
    let tails: Vec<(&String, &Vec<f64>)> = p.latents.iter().filter(|(id, _)| id.starts_with("beta")).collect();
    let mut expected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (id, u) in p.latents.iter().filter(|(id, _)| id.starts_with("alpha")) {
        let image: Vec<f64> = (0..8).map(|r| (0..8).map(|c| a[r * 8 + c] * u[c]).sum()).collect();
        let mut dists: Vec<(f64, &String)> = tails
            .iter()
            .map(|(t, v)| (image.iter().zip(v.iter()).map(|(x, y)| (x - y).powi(2)).sum(), *t))
            .collect();
        dists.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        expected.insert(id.clone(), dists.iter().take(3).map(|d| d.1.clone()).collect());
    }
    let mut got: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for t in p.graph.triples() {
        got.entry(t.head.clone()).or_default().insert(t.tail.clone());
    }
    assert_eq!(got, expected);
}

#[test]
fn identity_map_picks_nearest_distinct_latent() {
    let spec = PlantedKgSpec {
        modalities: vec![PlantedModality {
            label: "m".into(),
            size: 30,
        }],
        latent_dim: 4,
        relations: vec![PlantedRelation {
            name: "near".into(),
            head_modality: "m".into(),
            tail_modality: "m".into(),
            map: PlantedMap::Identity,
        }],
        edges_per_head: 1,
        noise_scale: 0.0,
        seed: 2,
    };
    let p = generate_planted_kg(&spec).unwrap();
    for t in p.graph.triples() {
        let u = &p.latents[&t.head];
        let d = |v: &Vec<f64>| u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = p
            .latents
            .iter()
            .filter(|(id, _)| **id != t.head)
            .min_by(|a, b| d(a.1).partial_cmp(&d(b.1)).unwrap())
            .unwrap();
        assert_eq!(&t.tail, best.0);
    }
}

#[test]
fn planted_cache_rows_equal_single_node_encoding() {
    let p = generate_planted_kg(&PlantedKgSpec::small(13)).unwrap();
    assert_eq!(p.graph.nodes().len(), 600);
    let specs = vec![EncoderSpec::latent("alpha", 8), EncoderSpec::latent("beta", 8)];
    let cache = encode_all(&p.graph, &specs, &ImportTable::new()).unwrap();
    assert_eq!(cache.len(), 600);
    let mut rng = seeded(77);
    let sample: Vec<&Node> = p.graph.nodes().choose_multiple(&mut rng, 20).collect();
    for node in sample {
        let spec = specs.iter().find(|s| s.modality == node.modality).unwrap();
        let single = encode(node, spec).unwrap();
        assert_eq!(cache.require(&node.id).unwrap(), single.vector.as_slice());
        let latent: Vec<f32> = p.latents[&node.id].iter().map(|&x| x as f32).collect();
        assert_eq!(single.vector, latent);
    }
    for block in cache.blocks() {
        let mut sorted = block.ids.clone();
        sorted.sort();
        assert_eq!(block.ids, sorted);
    }
}

#[test]
fn planted_generation_is_deterministic() {
    let a = generate_planted_kg(&PlantedKgSpec::small(5)).unwrap();
    let b = generate_planted_kg(&PlantedKgSpec::small(5)).unwrap();
    let c = generate_planted_kg(&PlantedKgSpec::small(6)).unwrap();
    assert_eq!(a.graph.nodes(), b.graph.nodes());
    assert_eq!(a.graph.triples(), b.graph.triples());
    assert_ne!(a.graph.triples(), c.graph.triples());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unigram_vectors_ignore_character_order(text in "[A-Z]{1,40}", seed in 0u64..50) {
        let spec = EncoderSpec::hash_ngram("p", vec![1], 16, seed);
        let mut chars: Vec<char> = text.chars().collect();
        chars.shuffle(&mut seeded(seed));
        let shuffled: String = chars.into_iter().collect();
        let a = encode(&Node::new("a", "p", text), &spec).unwrap();
        let b = encode(&Node::new("b", "p", shuffled), &spec).unwrap();
        prop_assert_eq!(a.vector, b.vector);
    }

    #[test]
    fn repeated_blocks_match_string_counts(block in "[ACGT]{4,12}") {
        let text = format!("{block}{block}");
        prop_assert_eq!(ngram_bucket_counts(&text, &[3]), oracle_counts(&text, &[3]));
    }
}
