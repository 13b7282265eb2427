//! Frozen unimodal encoders and the raw-embedding cache.
//!
//! Encoders are pure functions of `(feature, spec)`; nothing downstream ever
//! updates them. The hash-ngram featurizer stands in for a pretrained model:
//! character n-grams are hashed into 2^16 buckets, the count vector is
//! l2-normalized and multiplied by a fixed Gaussian matrix whose rows are
//! regenerated on demand from the seed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Node};
use crate::rng::{self, gaussian};

pub const HASH_BUCKETS: usize = 1 << 16;
pub const DEFAULT_RAW_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    HashNgram,
    LatentPassthrough,
    ExternalImport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub modality: String,
    pub kind: EncoderKind,
    #[serde(default)]
    pub ngram_sizes: Vec<usize>,
    #[serde(default = "default_raw_dim")]
    pub raw_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_raw_dim() -> usize {
    DEFAULT_RAW_DIM
}

impl EncoderSpec {
    pub fn hash_ngram(modality: impl Into<String>, ngram_sizes: Vec<usize>, raw_dim: usize, seed: u64) -> Self {
        EncoderSpec {
            modality: modality.into(),
            kind: EncoderKind::HashNgram,
            ngram_sizes,
            raw_dim,
            seed,
        }
    }

    pub fn latent(modality: impl Into<String>, raw_dim: usize) -> Self {
        EncoderSpec {
            modality: modality.into(),
            kind: EncoderKind::LatentPassthrough,
            ngram_sizes: Vec::new(),
            raw_dim,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_dim == 0 {
            return Err(Error::Config(format!(
                "raw_dim for `{}` must be positive",
                self.modality
            )));
        }
        if self.kind == EncoderKind::HashNgram && (self.ngram_sizes.is_empty() || self.ngram_sizes.contains(&0)) {
            return Err(Error::Config(format!(
                "hash-ngram encoder for `{}` needs positive n-gram sizes",
                self.modality
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbedding {
    pub node_id: String,
    pub modality: String,
    pub vector: Vec<f32>,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bucket counts of the character n-grams of `text`, keyed by bucket.
pub fn ngram_bucket_counts(text: &str, sizes: &[usize]) -> BTreeMap<usize, u32> {
    let chars: Vec<char> = text.chars().collect();
    let mut counts = BTreeMap::new();
    let mut buf = [0u8; 4];
    for &n in sizes {
        if chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            let bytes = window
                .iter()
                .flat_map(|c| c.encode_utf8(&mut buf).as_bytes().to_vec())
                .collect::<Vec<u8>>();
            let h = fnv1a(core::iter::once(n as u8).chain(bytes));
            *counts.entry((h as usize) & (HASH_BUCKETS - 1)).or_insert(0) += 1;
        }
    }
    counts
}

/// Row `bucket` of the seeded `HASH_BUCKETS x raw_dim` projection matrix.
pub fn projection_row(seed: u64, bucket: usize, raw_dim: usize) -> Vec<f64> {
    let mut rng = rng::seeded(rng::derive_seed(seed, bucket as u64));
    let scale = 1.0 / libm::sqrt(raw_dim as f64);
    (0..raw_dim).map(|_| gaussian(&mut rng) * scale).collect()
}

fn parse_latent(node: &Node, raw_dim: usize) -> Result<Vec<f32>> {
    let parsed = node
        .feature
        .split(',')
        .map(|tok| tok.trim().parse::<f32>())
        .collect::<core::result::Result<Vec<f32>, _>>()
        .map_err(|e| Error::LatentParse {
            node: node.id.clone(),
            detail: format!("{e}"),
        })?;
    if parsed.len() != raw_dim {
        return Err(Error::LatentParse {
            node: node.id.clone(),
            detail: format!("expected {raw_dim} values, found {}", parsed.len()),
        });
    }
    if parsed.iter().any(|x| !x.is_finite()) {
        return Err(Error::LatentParse {
            node: node.id.clone(),
            detail: "non-finite component".into(),
        });
    }
    Ok(parsed)
}

pub fn encode(node: &Node, spec: &EncoderSpec) -> Result<RawEmbedding> {
    spec.validate()?;
    if node.modality != spec.modality {
        return Err(Error::ModalityMismatch {
            node: node.id.clone(),
            expected: spec.modality.clone(),
            found: node.modality.clone(),
        });
    }
    let vector = match spec.kind {
        EncoderKind::LatentPassthrough => parse_latent(node, spec.raw_dim)?,
        EncoderKind::HashNgram => {
            let min = *spec.ngram_sizes.iter().min().expect("validated non-empty");
            if node.feature.chars().count() < min {
                return Err(Error::FeatureTooShort {
                    node: node.id.clone(),
                    min,
                });
            }
            let counts = ngram_bucket_counts(&node.feature, &spec.ngram_sizes);
            let norm = libm::sqrt(counts.values().map(|&c| (c as f64) * (c as f64)).sum::<f64>());
            let mut acc = alloc::vec![0.0f64; spec.raw_dim];
            for (&bucket, &count) in &counts {
                let w = count as f64 / norm;
                for (a, g) in acc.iter_mut().zip(projection_row(spec.seed, bucket, spec.raw_dim)) {
                    *a += w * g;
                }
            }
            acc.into_iter().map(|x| x as f32).collect()
        }
        EncoderKind::ExternalImport => {
            return Err(Error::Config(format!(
                "modality `{}` uses external-import; supply its embeddings through an import table",
                spec.modality
            )))
        }
    };
    Ok(RawEmbedding {
        node_id: node.id.clone(),
        modality: node.modality.clone(),
        vector,
    })
}

/// SHA-256 over a canonical rendering of the spec set (sorted by modality).
pub fn fingerprint(specs: &[EncoderSpec]) -> [u8; 32] {
    let mut sorted: Vec<&EncoderSpec> = specs.iter().collect();
    sorted.sort_by(|a, b| a.modality.cmp(&b.modality));
    let mut h = Sha256::new();
    h.update(b"encoder-specs/v1");
    for s in sorted {
        h.update((s.modality.len() as u64).to_le_bytes());
        h.update(s.modality.as_bytes());
        h.update([s.kind as u8]);
        h.update((s.ngram_sizes.len() as u64).to_le_bytes());
        for &n in &s.ngram_sizes {
            h.update((n as u64).to_le_bytes());
        }
        h.update((s.raw_dim as u64).to_le_bytes());
        h.update(s.seed.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheBlock {
    pub modality: String,
    pub raw_dim: usize,
    pub ids: Vec<String>,
    /// Row-major `ids.len() x raw_dim`.
    pub data: Vec<f32>,
}

impl CacheBlock {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.raw_dim..(i + 1) * self.raw_dim]
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    blocks: Vec<CacheBlock>,
    fingerprint: [u8; 32],
    lookup: BTreeMap<String, (usize, usize)>,
}

impl PartialEq for EmbeddingCache {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks && self.fingerprint == other.fingerprint
    }
}

impl EmbeddingCache {
    pub fn new(blocks: Vec<CacheBlock>, fingerprint: [u8; 32]) -> Result<Self> {
        let mut lookup = BTreeMap::new();
        for (b, block) in blocks.iter().enumerate() {
            if block.data.len() != block.ids.len() * block.raw_dim {
                return Err(Error::Shape {
                    op: "embedding cache",
                    detail: format!(
                        "block `{}` has {} values for {} rows of width {}",
                        block.modality,
                        block.data.len(),
                        block.ids.len(),
                        block.raw_dim
                    ),
                });
            }
            for (r, id) in block.ids.iter().enumerate() {
                if lookup.insert(id.clone(), (b, r)).is_some() {
                    return Err(Error::DuplicateId(id.clone()));
                }
            }
        }
        Ok(EmbeddingCache {
            blocks,
            fingerprint,
            lookup,
        })
    }

    /// Builds a cache from independently computed rows; rows are ordered by
    /// node id within each modality regardless of input order.
    pub fn assemble(
        modalities: &[(String, usize)],
        mut rows: Vec<RawEmbedding>,
        fingerprint: [u8; 32],
    ) -> Result<Self> {
        rows.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        let mut blocks: Vec<CacheBlock> = modalities
            .iter()
            .map(|(m, d)| CacheBlock {
                modality: m.clone(),
                raw_dim: *d,
                ids: Vec::new(),
                data: Vec::new(),
            })
            .collect();
        for row in rows {
            let block = blocks
                .iter_mut()
                .find(|b| b.modality == row.modality)
                .ok_or_else(|| Error::MissingSpec(row.modality.clone()))?;
            if row.vector.len() != block.raw_dim {
                return Err(Error::Shape {
                    op: "embedding cache",
                    detail: format!(
                        "row `{}` has length {}, expected {}",
                        row.node_id,
                        row.vector.len(),
                        block.raw_dim
                    ),
                });
            }
            block.ids.push(row.node_id);
            block.data.extend_from_slice(&row.vector);
        }
        Self::new(blocks, fingerprint)
    }

    pub fn blocks(&self) -> &[CacheBlock] {
        &self.blocks
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.lookup.get(id).map(|&(b, r)| self.blocks[b].row(r))
    }

    pub fn require(&self, id: &str) -> Result<&[f32]> {
        self.get(id).ok_or_else(|| Error::MissingCacheEntry(id.into()))
    }

    pub fn raw_dim(&self, modality: &str) -> Option<usize> {
        self.blocks.iter().find(|b| b.modality == modality).map(|b| b.raw_dim)
    }

    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }
}

/// Precomputed embeddings for external-import modalities, keyed by node id.
pub type ImportTable = BTreeMap<String, Vec<f32>>;

pub fn spec_for<'a>(specs: &'a [EncoderSpec], modality: &str) -> Result<&'a EncoderSpec> {
    specs
        .iter()
        .find(|s| s.modality == modality)
        .ok_or_else(|| Error::MissingSpec(modality.into()))
}

/// Encodes one node, consulting `imports` for external-import modalities.
pub fn encode_with_imports(node: &Node, spec: &EncoderSpec, imports: &ImportTable) -> Result<RawEmbedding> {
    if spec.kind != EncoderKind::ExternalImport {
        return encode(node, spec);
    }
    let v = imports
        .get(&node.id)
        .ok_or_else(|| Error::MissingCacheEntry(node.id.clone()))?;
    if v.len() != spec.raw_dim || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::LatentParse {
            node: node.id.clone(),
            detail: format!("imported vector must have {} finite values", spec.raw_dim),
        });
    }
    Ok(RawEmbedding {
        node_id: node.id.clone(),
        modality: node.modality.clone(),
        vector: v.clone(),
    })
}

pub fn cache_layout(kg: &KnowledgeGraph, specs: &[EncoderSpec]) -> Result<Vec<(String, usize)>> {
    for s in specs {
        s.validate()?;
    }
    kg.modality_vocab()
        .iter()
        .map(|m| spec_for(specs, m).map(|s| (m.clone(), s.raw_dim)))
        .collect()
}

pub fn encode_all(kg: &KnowledgeGraph, specs: &[EncoderSpec], imports: &ImportTable) -> Result<EmbeddingCache> {
    let layout = cache_layout(kg, specs)?;
    let mut rows = Vec::with_capacity(kg.nodes().len());
    for node in kg.nodes() {
        let spec = spec_for(specs, &node.modality)?;
        rows.push(encode_with_imports(node, spec, imports)?);
    }
    EmbeddingCache::assemble(&layout, rows, fingerprint(specs))
}
