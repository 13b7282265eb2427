//! The bridge: projection heads, categorical embeddings and the
//! relation-conditioned transformer ψ.
//!
//! For a head embedding `h` of modality `c_i`, a target modality `c_j` and a
//! relation `r`:
//!
//! 1. `z = p_{c_i}(h)` (per-modality projection head)
//! 2. `Z = [z; e(c_i); e(c_j); e(r)] + slot biases`, a `4 x d` sequence
//! 3. `ψ = encoder(Z)[0]` (output row of the first position)
//! 4. combine: `z + ψ` (residual), `ψ` (no residual) or `z ∘ ψ` (rotate)
//! 5. l2-normalize
//!
//! Candidate tails are `normalize(p_{c_j}(h_j))`, so retrieval is an inner
//! product between unit vectors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingCache, RawEmbedding};
use crate::error::{Error, Result};
use crate::nn::{self, BlockSlots};
use crate::params::ParamStore;
use crate::real::Real;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Number of rows in the transformer input: z, head modality, tail modality, relation.
pub const SLOTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    ResidualAdditive,
    NoResidual,
    RotateMultiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    Linear,
    TwoLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub variant: Variant,
    pub projection_kind: ProjectionKind,
    pub seed: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            d: 128,
            layers: 6,
            heads: 4,
            ff_mult: 4,
            variant: Variant::ResidualAdditive,
            projection_kind: ProjectionKind::Linear,
            seed: 0,
        }
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || !self.d.is_multiple_of(2) {
            return Err(Error::Config(format!("d must be even and at least 2, got {}", self.d)));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d={} is not divisible by heads={}",
                self.d, self.heads
            )));
        }
        if self.ff_mult == 0 {
            return Err(Error::Config("ff_mult must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionSlots {
    pub w1: usize,
    pub b1: usize,
    pub second: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSlots {
    pub projections: Vec<ProjectionSlots>,
    pub modality_table: usize,
    pub relation_table: usize,
    pub slot_bias: usize,
    pub blocks: Vec<BlockSlots>,
}

/// Conditioning labels of one bridged query, as vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Condition {
    pub head_modality: usize,
    pub tail_modality: usize,
    pub relation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgedEmbedding<T> {
    pub vector: Vec<T>,
    pub head_modality: String,
    pub tail_modality: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeModel<T> {
    pub config: BridgeConfig,
    pub modalities: Vec<String>,
    pub raw_dims: Vec<usize>,
    pub relations: Vec<String>,
    pub params: ParamStore<T>,
    pub slots: BridgeSlots,
}

/// Unit vector in the direction of `v`; fails for norms below 1e-12.
pub fn l2_normalize<T: Real>(v: &[T]) -> Result<Vec<T>> {
    let norm = crate::tensor::l2_norm(v);
    if !(norm.to_f64() > 1e-12) {
        return Err(Error::DegenerateVector(norm.to_f64()));
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

/// Variant combination rule applied to plain vectors, before normalization.
pub fn combine<T: Real>(variant: Variant, z: &[T], psi: &[T]) -> Vec<T> {
    match variant {
        Variant::ResidualAdditive => z.iter().zip(psi).map(|(a, b)| *a + *b).collect(),
        Variant::NoResidual => psi.to_vec(),
        Variant::RotateMultiplicative => z.iter().zip(psi).map(|(a, b)| *a * *b).collect(),
    }
}

impl<T: Real> BridgeModel<T> {
    /// Fresh model. `modalities` pairs each label with its raw embedding width.
    pub fn new(config: BridgeConfig, modalities: &[(String, usize)], relations: &[String]) -> Result<Self> {
        config.validate()?;
        if modalities.is_empty() {
            return Err(Error::Config("bridge needs at least one modality".into()));
        }
        let d = config.d;
        let mut rng = rng::seeded(config.seed);
        let mut params = ParamStore::new();

        let mut projections = Vec::with_capacity(modalities.len());
        for (label, raw) in modalities {
            let w1 = params.add(format!("proj.{label}.w1"), nn::xavier_uniform(&mut rng, *raw, d));
            let b1 = params.add(format!("proj.{label}.b1"), Tensor::zeros(&[d]));
            let second = match config.projection_kind {
                ProjectionKind::Linear => None,
                ProjectionKind::TwoLayer => {
                    let w2 = params.add(format!("proj.{label}.w2"), nn::xavier_uniform(&mut rng, d, d));
                    let b2 = params.add(format!("proj.{label}.b2"), Tensor::zeros(&[d]));
                    Some((w2, b2))
                }
            };
            projections.push(ProjectionSlots { w1, b1, second });
        }

        let std = 1.0 / libm::sqrt(d as f64);
        let modality_table = params.add("embed.modality", nn::normal(&mut rng, &[modalities.len(), d], std));
        let relation_table = params.add(
            "embed.relation",
            nn::normal(&mut rng, &[relations.len().max(1), d], std),
        );
        let slot_bias = params.add("embed.slot_bias", Tensor::zeros(&[SLOTS, d]));
        let blocks = (0..config.layers)
            .map(|l| BlockSlots::register(&mut params, &format!("psi.block{l}"), d, config.ff_mult * d, &mut rng))
            .collect();

        Ok(BridgeModel {
            config,
            modalities: modalities.iter().map(|(m, _)| m.clone()).collect(),
            raw_dims: modalities.iter().map(|(_, r)| *r).collect(),
            relations: relations.to_vec(),
            params,
            slots: BridgeSlots {
                projections,
                modality_table,
                relation_table,
                slot_bias,
                blocks,
            },
        })
    }

    pub fn cast<U: Real>(&self) -> BridgeModel<U> {
        BridgeModel {
            config: self.config.clone(),
            modalities: self.modalities.clone(),
            raw_dims: self.raw_dims.clone(),
            relations: self.relations.clone(),
            params: self.params.cast(),
            slots: self.slots.clone(),
        }
    }

    /// Same architecture with different parameter values.
    pub fn with_params(&self, params: ParamStore<T>) -> Self {
        BridgeModel {
            config: self.config.clone(),
            modalities: self.modalities.clone(),
            raw_dims: self.raw_dims.clone(),
            relations: self.relations.clone(),
            params,
            slots: self.slots.clone(),
        }
    }

    pub fn modality_index(&self, label: &str) -> Result<usize> {
        self.modalities
            .iter()
            .position(|m| m == label)
            .ok_or_else(|| Error::UnknownModality(label.to_string()))
    }

    pub fn relation_index(&self, label: &str) -> Result<usize> {
        self.relations
            .iter()
            .position(|r| r == label)
            .ok_or_else(|| Error::UnknownRelation(label.to_string()))
    }

    pub fn condition(&self, head_modality: &str, tail_modality: &str, relation: &str) -> Result<Condition> {
        Ok(Condition {
            head_modality: self.modality_index(head_modality)?,
            tail_modality: self.modality_index(tail_modality)?,
            relation: self.relation_index(relation)?,
        })
    }

    /// Recorded projection `p_c(raw)` for rows of one modality; not normalized.
    pub fn project_on_tape(&self, tape: &mut Tape<T>, vars: &[Var], modality: usize, raw: Var) -> Result<Var> {
        let p = self.slots.projections[modality];
        let mut z = nn::linear(tape, raw, vars[p.w1], vars[p.b1])?;
        if let Some((w2, b2)) = p.second {
            let h = tape.gelu(z)?;
            z = nn::linear(tape, h, vars[w2], vars[b2])?;
        }
        Ok(z)
    }

    /// Recorded bridge transform of projected heads `z: [B x d]`, one
    /// condition per row. Returns unit rows `[B x d]`.
    pub fn transform_on_tape(&self, tape: &mut Tape<T>, vars: &[Var], z: Var, conds: &[Condition]) -> Result<Var> {
        let b = conds.len();
        if tape.value(z).rows() != b || tape.value(z).cols() != self.config.d {
            return Err(Error::Shape {
                op: "bridge_transform",
                detail: format!(
                    "z is {}x{}, expected {b}x{}",
                    tape.value(z).rows(),
                    tape.value(z).cols(),
                    self.config.d
                ),
            });
        }
        for c in conds {
            if c.head_modality >= self.modalities.len() || c.tail_modality >= self.modalities.len() {
                return Err(Error::UnknownModality(format!(
                    "index {}",
                    c.head_modality.max(c.tail_modality)
                )));
            }
            if c.relation >= self.relations.len() {
                return Err(Error::UnknownRelation(format!("index {}", c.relation)));
            }
        }
        let s = &self.slots;
        let heads: Vec<usize> = conds.iter().map(|c| c.head_modality).collect();
        let tails: Vec<usize> = conds.iter().map(|c| c.tail_modality).collect();
        let rels: Vec<usize> = conds.iter().map(|c| c.relation).collect();
        let ch = tape.gather_rows(vars[s.modality_table], &heads)?;
        let ct = tape.gather_rows(vars[s.modality_table], &tails)?;
        let r = tape.gather_rows(vars[s.relation_table], &rels)?;
        let stacked = tape.interleave(&[z, ch, ct, r])?;
        let slot_ix: Vec<usize> = (0..b * SLOTS).map(|i| i % SLOTS).collect();
        let slot_bias = tape.gather_rows(vars[s.slot_bias], &slot_ix)?;
        let x = tape.add(stacked, slot_bias)?;

        let blocks: Vec<_> = s.blocks.iter().map(|bs| bs.vars(vars)).collect();
        let y = nn::encoder(tape, x, &blocks, SLOTS, self.config.heads)?;
        let first: Vec<usize> = (0..b).map(|i| i * SLOTS).collect();
        let psi = tape.gather_rows(y, &first)?;

        let combined = match self.config.variant {
            Variant::ResidualAdditive => tape.add(z, psi)?,
            Variant::NoResidual => psi,
            Variant::RotateMultiplicative => tape.mul(z, psi)?,
        };
        tape.normalize_rows(combined)
    }

    fn raw_matrix(&self, modality: usize, rows: &[&[f32]]) -> Result<Tensor<T>> {
        let width = self.raw_dims[modality];
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::Shape {
                    op: "project",
                    detail: format!(
                        "raw row of length {} for `{}` (width {width})",
                        r.len(),
                        self.modalities[modality]
                    ),
                });
            }
            data.extend(r.iter().map(|&x| T::from_f64(x as f64)));
        }
        Tensor::matrix(rows.len(), width, data)
    }

    /// Projected, unnormalized `z` rows for raw embeddings of one modality.
    pub fn project_rows(&self, modality: usize, rows: &[&[f32]]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let raw = tape.input(self.raw_matrix(modality, rows)?)?;
        let z = self.project_on_tape(&mut tape, &vars, modality, raw)?;
        Ok(tape.value(z).clone())
    }

    pub fn project(&self, h: &RawEmbedding) -> Result<Vec<T>> {
        let m = self.modality_index(&h.modality)?;
        Ok(self.project_rows(m, &[&h.vector])?.into_data())
    }

    /// Bridged unit rows for raw heads of one modality under one condition.
    pub fn bridge_rows(&self, rows: &[&[f32]], cond: Condition) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let raw = tape.input(self.raw_matrix(cond.head_modality, rows)?)?;
        let z = self.project_on_tape(&mut tape, &vars, cond.head_modality, raw)?;
        let conds = vec![cond; rows.len()];
        let h = self.transform_on_tape(&mut tape, &vars, z, &conds)?;
        Ok(tape.value(h).clone())
    }

    /// Projects rows of mixed modalities on the tape, keeping input order.
    pub fn project_mixed_on_tape(&self, tape: &mut Tape<T>, vars: &[Var], rows: &[(usize, &[f32])]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Empty("project"));
        }
        let mut parts = Vec::new();
        let mut position = vec![0usize; rows.len()];
        let mut offset = 0;
        for m in 0..self.modalities.len() {
            let members: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].0 == m).collect();
            if members.is_empty() {
                continue;
            }
            let raw: Vec<&[f32]> = members.iter().map(|&i| rows[i].1).collect();
            let x = tape.input(self.raw_matrix(m, &raw)?)?;
            parts.push(self.project_on_tape(tape, vars, m, x)?);
            for (k, &i) in members.iter().enumerate() {
                position[i] = offset + k;
            }
            offset += members.len();
        }
        if offset != rows.len() {
            return Err(Error::UnknownModality(format!(
                "index {}",
                rows.iter().map(|r| r.0).max().unwrap_or(0)
            )));
        }
        let all = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_rows(&parts)?
        };
        let identity = position.iter().enumerate().all(|(i, &p)| i == p);
        if identity {
            Ok(all)
        } else {
            tape.gather_rows(all, &position)
        }
    }

    /// Bridged unit rows for heads of any modality, one condition per head.
    pub fn bridge_batch(&self, heads: &[(&[f32], Condition)]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let rows: Vec<(usize, &[f32])> = heads.iter().map(|(r, c)| (c.head_modality, *r)).collect();
        let z = self.project_mixed_on_tape(&mut tape, &vars, &rows)?;
        let conds: Vec<Condition> = heads.iter().map(|h| h.1).collect();
        let h = self.transform_on_tape(&mut tape, &vars, z, &conds)?;
        Ok(tape.value(h).clone())
    }

    /// Transform of an already projected `z`.
    pub fn bridge_transform(
        &self,
        z: &[T],
        head_modality: &str,
        tail_modality: &str,
        relation: &str,
    ) -> Result<BridgedEmbedding<T>> {
        let cond = self.condition(head_modality, tail_modality, relation)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let zv = tape.input(Tensor::matrix(1, z.len(), z.to_vec())?)?;
        let h = self.transform_on_tape(&mut tape, &vars, zv, &[cond])?;
        Ok(BridgedEmbedding {
            vector: tape.value(h).data().to_vec(),
            head_modality: head_modality.to_string(),
            tail_modality: tail_modality.to_string(),
            relation: relation.to_string(),
        })
    }

    /// Unit rows `normalize(p_c(h))` for candidate ids of one modality, in input order.
    pub fn embed_candidates(&self, ids: &[&str], modality: &str, cache: &EmbeddingCache) -> Result<Tensor<T>> {
        let m = self.modality_index(modality)?;
        let rows = ids.iter().map(|id| cache.require(id)).collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let raw = tape.input(self.raw_matrix(m, &rows)?)?;
        let z = self.project_on_tape(&mut tape, &vars, m, raw)?;
        let n = tape.normalize_rows(z)?;
        Ok(tape.value(n).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(variant: Variant) -> BridgeModel<f64> {
        let cfg = BridgeConfig {
            d: 8,
            layers: 2,
            heads: 2,
            variant,
            seed: 3,
            ..BridgeConfig::default()
        };
        BridgeModel::new(cfg, &[("a".into(), 5), ("b".into(), 3)], &["r1".into(), "r2".into()]).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[3.0f64, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0f64, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(l2_normalize(&[0.0f64, 0.0]), Err(Error::DegenerateVector(_))));
    }

    #[test]
    fn fresh_residual_and_no_residual_models_are_identity() {
        let z = [0.3, -1.0, 2.0, 0.5, 0.0, 0.1, -0.2, 0.7];
        let expect = l2_normalize(&z).unwrap();
        for v in [Variant::ResidualAdditive, Variant::NoResidual] {
            let m = model(v);
            for (hm, tm, r) in [("a", "b", "r1"), ("b", "a", "r2")] {
                let out = m.bridge_transform(&z, hm, tm, r).unwrap();
                for (x, y) in out.vector.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12, "{v:?}");
                }
            }
        }
    }

    #[test]
    fn rotate_with_unit_psi_is_identity() {
        let z = [0.3, -1.0, 2.0, 0.5];
        let out = l2_normalize(&combine(Variant::RotateMultiplicative, &z, &[1.0; 4])).unwrap();
        assert_eq!(out, l2_normalize(&z).unwrap());
        let fresh = model(Variant::RotateMultiplicative);
        let z8 = [0.3, -1.0, 2.0, 0.5, 0.1, 0.1, -0.2, 0.7];
        let got = fresh.bridge_transform(&z8, "a", "b", "r1").unwrap().vector;
        let sq: Vec<f64> = z8.iter().map(|x| x * x).collect();
        for (x, y) in got.iter().zip(l2_normalize(&sq).unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let m = model(Variant::ResidualAdditive);
        let z = [1.0; 8];
        assert_eq!(
            m.bridge_transform(&z, "x", "b", "r1").unwrap_err(),
            Error::UnknownModality("x".into())
        );
        assert_eq!(
            m.bridge_transform(&z, "a", "b", "zz").unwrap_err(),
            Error::UnknownRelation("zz".into())
        );
    }

    #[test]
    fn mixed_batch_matches_single_rows() {
        let m = model(Variant::RotateMultiplicative);
        let a = [0.1f32, 0.2, -0.3, 0.4, 0.5];
        let b = [1.0f32, -0.5, 0.25];
        let c_ab = m.condition("a", "b", "r1").unwrap();
        let c_ba = m.condition("b", "a", "r2").unwrap();
        let batch = m.bridge_batch(&[(&b, c_ba), (&a, c_ab), (&b, c_ba)]).unwrap();
        let one_a = m.bridge_rows(&[&a], c_ab).unwrap();
        let one_b = m.bridge_rows(&[&b], c_ba).unwrap();
        for (i, want) in [(0, &one_b), (1, &one_a), (2, &one_b)] {
            for (x, y) in batch.row(i).iter().zip(want.row(0)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = BridgeConfig {
            d: 7,
            ..BridgeConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BridgeConfig {
            d: 8,
            heads: 3,
            ..BridgeConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BridgeConfig {
            layers: 0,
            ..BridgeConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
