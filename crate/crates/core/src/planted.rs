//! Synthetic graphs whose edges come from known linear maps over latent vectors.
//!
//! Every node carries a unit-norm latent `u`. For a relation with map `A`, the
//! tails of head `i` are the `edges_per_head` tail-modality latents nearest to
//! `A·u_i + noise`. Since a linear bridge recovers this structure exactly, the
//! generator is a ground-truth substrate for learnability tests.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Node, Triple};
use crate::rng::{self, gaussian};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModality {
    pub label: String,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PlantedMap {
    Identity,
    /// Gaussian entries with variance `1/latent_dim`, drawn from this seed.
    Gaussian {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRelation {
    pub name: String,
    pub head_modality: String,
    pub tail_modality: String,
    pub map: PlantedMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedKgSpec {
    pub modalities: Vec<PlantedModality>,
    pub latent_dim: usize,
    pub relations: Vec<PlantedRelation>,
    pub edges_per_head: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl PlantedKgSpec {
    /// Two modalities of 300 nodes, one relation, three edges per head.
    pub fn small(seed: u64) -> Self {
        PlantedKgSpec {
            modalities: alloc::vec![
                PlantedModality {
                    label: "alpha".into(),
                    size: 300
                },
                PlantedModality {
                    label: "beta".into(),
                    size: 300
                },
            ],
            latent_dim: 8,
            relations: alloc::vec![PlantedRelation {
                name: "maps_to".into(),
                head_modality: "alpha".into(),
                tail_modality: "beta".into(),
                map: PlantedMap::Gaussian { seed: 1 },
            }],
            edges_per_head: 3,
            noise_scale: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.edges_per_head == 0 {
            return Err(Error::Config("edges_per_head must be at least 1".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise_scale must be nonnegative".into()));
        }
        for m in &self.modalities {
            if m.size < self.edges_per_head {
                return Err(Error::Config(format!(
                    "modality `{}` has {} nodes, fewer than edges_per_head {}",
                    m.label, m.size, self.edges_per_head
                )));
            }
        }
        for r in &self.relations {
            for label in [&r.head_modality, &r.tail_modality] {
                if !self.modalities.iter().any(|m| &m.label == label) {
                    return Err(Error::UnknownModality(label.clone()));
                }
            }
            if r.head_modality == r.tail_modality {
                let size = self
                    .modalities
                    .iter()
                    .find(|m| m.label == r.head_modality)
                    .unwrap()
                    .size;
                if size <= self.edges_per_head {
                    return Err(Error::Config(format!(
                        "relation `{}` needs more than {} nodes in `{}`",
                        r.name, self.edges_per_head, r.head_modality
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlantedKg {
    pub graph: KnowledgeGraph,
    pub latents: BTreeMap<String, Vec<f64>>,
    /// Row-major `latent_dim x latent_dim` map per relation name.
    pub maps: BTreeMap<String, Vec<f64>>,
}

pub fn node_id(modality: &str, i: usize) -> String {
    format!("{modality}_{i:04}")
}

/// Comma-separated shortest round-trip rendering of an `f32` vector.
pub fn serialize_latent(v: &[f32]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

pub fn apply_map(map: &[f64], dim: usize, u: &[f64]) -> Vec<f64> {
    (0..dim)
        .map(|r| (0..dim).map(|c| map[r * dim + c] * u[c]).sum())
        .collect()
}

fn build_map(map: PlantedMap, dim: usize, base_seed: u64) -> Vec<f64> {
    match map {
        PlantedMap::Identity => {
            let mut m = alloc::vec![0.0; dim * dim];
            for i in 0..dim {
                m[i * dim + i] = 1.0;
            }
            m
        }
        PlantedMap::Gaussian { seed } => {
            let mut rng = rng::seeded(rng::derive_seed(base_seed, 0x4d41_5000 ^ seed));
            let scale = 1.0 / libm::sqrt(dim as f64);
            (0..dim * dim).map(|_| gaussian(&mut rng) * scale).collect()
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn generate_planted_kg(spec: &PlantedKgSpec) -> Result<PlantedKg> {
    spec.validate()?;
    let dim = spec.latent_dim;
    let mut latent_rng = rng::seeded(rng::derive_seed(spec.seed, 1));

    let mut nodes = Vec::new();
    let mut latents = BTreeMap::new();
    // per modality: (ids, latents) in index order
    let mut pools: BTreeMap<&str, Vec<(String, Vec<f64>)>> = BTreeMap::new();
    for m in &spec.modalities {
        let pool = pools.entry(m.label.as_str()).or_default();
        for i in 0..m.size {
            let raw: Vec<f64> = (0..dim).map(|_| gaussian(&mut latent_rng)).collect();
            let norm = libm::sqrt(raw.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            let v32: Vec<f32> = raw.iter().map(|x| (x / norm) as f32).collect();
            let v64: Vec<f64> = v32.iter().map(|&x| x as f64).collect();
            let id = node_id(&m.label, i);
            nodes.push(Node::new(id.clone(), m.label.clone(), serialize_latent(&v32)));
            latents.insert(id.clone(), v64.clone());
            pool.push((id, v64));
        }
    }

    let mut noise_rng = rng::seeded(rng::derive_seed(spec.seed, 2));
    let mut maps = BTreeMap::new();
    let mut triples = Vec::new();
    for rel in &spec.relations {
        let map = build_map(rel.map, dim, spec.seed);
        let heads = &pools[rel.head_modality.as_str()];
        let tails = &pools[rel.tail_modality.as_str()];
        for (head_id, u) in heads {
            let mut target = apply_map(&map, dim, u);
            if spec.noise_scale > 0.0 {
                for t in target.iter_mut() {
                    *t += spec.noise_scale * gaussian(&mut noise_rng);
                }
            }
            let mut ranked: Vec<(f64, usize)> = tails
                .iter()
                .enumerate()
                .filter(|(_, (id, _))| id != head_id)
                .map(|(j, (_, v))| (sq_dist(&target, v), j))
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, j) in ranked.iter().take(spec.edges_per_head) {
                triples.push(Triple::new(head_id.clone(), rel.name.clone(), tails[j].0.clone()));
            }
        }
        maps.insert(rel.name.clone(), map);
    }

    let modality_vocab = spec.modalities.iter().map(|m| m.label.clone()).collect();
    let relation_vocab = spec.relations.iter().map(|r| r.name.clone()).collect();
    let graph = KnowledgeGraph::new(nodes, triples, Some(modality_vocab), Some(relation_vocab))?;
    Ok(PlantedKg { graph, latents, maps })
}
