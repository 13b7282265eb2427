//! Contrastive training of the bridge.
//!
//! Each training triple contributes one InfoNCE term: the bridged head is
//! scored against its true tail and `M` same-modality corruptions, all
//! embedded with the tail modality's projection head and normalized.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::bridge::{BridgeConfig, BridgeModel, Condition, Variant};
use crate::encoder::EmbeddingCache;
use crate::error::{Error, Result};
use crate::eval::{evaluate_link_prediction, BridgeScorer, EvalOptions};
use crate::graph::{KnowledgeGraph, TripleIx};
use crate::negatives::{known_positives, sample_from_pool, KnownPositives};
use crate::real::Real;
use crate::rng::{self, derive_seed};
use crate::split::TripleSplit;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    Sampled,
    /// Also uses same-modality positives of the other batch triples.
    InBatchSampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub tau: f64,
    pub negatives: usize,
    pub seed: u64,
    /// Overrides the bridge variant when set.
    pub variant: Option<Variant>,
    pub negative_mode: NegativeMode,
    pub learnable_tau: bool,
    /// Skip validation ranking during training.
    pub skip_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 50,
            lr: 1e-4,
            tau: 0.07,
            negatives: 31,
            seed: 0,
            variant: None,
            negative_mode: NegativeMode::Sampled,
            learnable_tau: false,
            skip_validation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: BridgeModel<f32>,
    pub train_config: TrainConfig,
    pub fingerprint: [u8; 32],
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Temperature in effect at this point (differs from the config only
    /// when it is learned).
    pub tau: f64,
}

impl Checkpoint {
    pub fn content_hash(&self) -> [u8; 32] {
        self.model.params.content_hash()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Checkpoint with the highest validation MRR, if validation ran.
    pub best: Option<Checkpoint>,
    /// Mean loss over the train triples with a fixed negative draw, before
    /// and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Draws where the known-positive filter had to be relaxed.
    pub relaxed_draws: usize,
}

/// One batch laid out for the loss: queries, the union of candidate tails,
/// and per-query candidate columns (positive first).
#[derive(Debug, Clone)]
pub struct PreparedBatch<'a> {
    pub heads: Vec<(&'a [f32], Condition)>,
    pub candidates: Vec<(usize, &'a [f32])>,
    /// `[B x W]` indices into `candidates`; column 0 is the positive.
    pub columns: Vec<usize>,
    pub width: usize,
    /// Per-row count of real columns when rows are ragged.
    pub widths: Option<Vec<usize>>,
}

/// Lays out `triples` with their sampled `negatives`. With `in_batch`, the
/// positives of other same-tail-modality triples are appended when they
/// are not known positives of the row's `(head, relation)`.
pub fn prepare_batch<'a, T: Real>(
    kg: &KnowledgeGraph,
    model: &BridgeModel<T>,
    cache: &'a EmbeddingCache,
    triples: &[TripleIx],
    negatives: &[Vec<usize>],
    in_batch: Option<&KnownPositives>,
) -> Result<PreparedBatch<'a>> {
    if triples.is_empty() || triples.len() != negatives.len() {
        return Err(Error::Empty("prepare_batch"));
    }
    let mut slot_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut candidates = Vec::new();
    let mut slot = |node: usize| -> Result<usize> {
        if let Some(&s) = slot_of.get(&node) {
            return Ok(s);
        }
        let n = kg.node(node);
        let m = model.modality_index(&n.modality)?;
        candidates.push((m, cache.require(&n.id)?));
        slot_of.insert(node, candidates.len() - 1);
        Ok(candidates.len() - 1)
    };

    let mut heads = Vec::with_capacity(triples.len());
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(triples.len());
    for (t, negs) in triples.iter().zip(negatives) {
        let hn = kg.node(t.head);
        let tm = &kg.modality_vocab()[kg.node_modality(t.tail)];
        let cond = model.condition(&hn.modality, tm, &kg.relation_vocab()[t.relation])?;
        heads.push((cache.require(&hn.id)?, cond));
        let mut cols = vec![slot(t.tail)?];
        for &n in negs {
            cols.push(slot(n)?);
        }
        rows.push(cols);
    }
    if let Some(known) = in_batch {
        for (i, t) in triples.iter().enumerate() {
            let tm = kg.node_modality(t.tail);
            for (j, o) in triples.iter().enumerate() {
                if i == j || kg.node_modality(o.tail) != tm || o.tail == t.tail {
                    continue;
                }
                if known.get(&(t.head, t.relation)).is_some_and(|k| k.contains(&o.tail)) {
                    continue;
                }
                let s = slot(o.tail)?;
                if !rows[i].contains(&s) {
                    rows[i].push(s);
                }
            }
        }
    }
    let width = rows.iter().map(Vec::len).max().unwrap_or(1);
    let ragged = rows.iter().any(|r| r.len() != width);
    let widths = ragged.then(|| rows.iter().map(Vec::len).collect());
    let mut columns = Vec::with_capacity(rows.len() * width);
    for r in &rows {
        columns.extend(r);
        columns.extend(core::iter::repeat_n(r[0], width - r.len()));
    }
    Ok(PreparedBatch {
        heads,
        candidates,
        columns,
        width,
        widths,
    })
}

/// Temperature handling on the tape.
#[derive(Debug, Clone, Copy)]
pub enum Temperature {
    Fixed(f64),
    /// Inverse temperature held in a `[1 x 1]` tape value.
    Learned(Var),
}

/// Mean InfoNCE of a prepared batch, recorded on `tape`.
pub fn batch_loss_on_tape<T: Real>(
    model: &BridgeModel<T>,
    tape: &mut Tape<T>,
    vars: &[Var],
    batch: &PreparedBatch<'_>,
    temperature: Temperature,
) -> Result<Var> {
    let rows: Vec<(usize, &[f32])> = batch.heads.iter().map(|(r, c)| (c.head_modality, *r)).collect();
    let z = model.project_mixed_on_tape(tape, vars, &rows)?;
    let conds: Vec<Condition> = batch.heads.iter().map(|h| h.1).collect();
    let h = model.transform_on_tape(tape, vars, z, &conds)?;
    let c = model.project_mixed_on_tape(tape, vars, &batch.candidates)?;
    let c = tape.normalize_rows(c)?;
    let sims = tape.row_dots(h, c, &batch.columns)?;
    let logits = match temperature {
        Temperature::Fixed(tau) => tape.scale(sims, T::from_f64(1.0 / tau))?,
        Temperature::Learned(inv) => {
            let col = tape.gather_rows(inv, &vec![0; batch.heads.len()])?;
            tape.mul_column(sims, col)?
        }
    };
    let targets = vec![0; batch.heads.len()];
    tape.cross_entropy_prefix(logits, &targets, batch.widths.as_deref())
}

/// Loss value of one batch under fixed `tau`.
pub fn batch_loss<T: Real>(model: &BridgeModel<T>, batch: &PreparedBatch<'_>, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape)?;
    let l = batch_loss_on_tape(model, &mut tape, &vars, batch, Temperature::Fixed(tau))?;
    Ok(tape.value(l).item().to_f64())
}

/// Loss and per-parameter gradients of one batch under fixed `tau`.
pub fn batch_loss_and_grads<T: Real>(
    model: &BridgeModel<T>,
    batch: &PreparedBatch<'_>,
    tau: f64,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape)?;
    let l = batch_loss_on_tape(model, &mut tape, &vars, batch, Temperature::Fixed(tau))?;
    let grads = tape.backward(l)?;
    Ok((tape.value(l).item().to_f64(), grads.param_grads(&model.params.shapes())))
}

fn check_coverage(kg: &KnowledgeGraph, cache: &EmbeddingCache, triples: &[TripleIx]) -> Result<()> {
    for t in triples {
        cache.require(&kg.node(t.head).id)?;
        cache.require(&kg.node(t.tail).id)?;
    }
    Ok(())
}

/// Label and raw width of every graph modality, as the bridge expects.
pub fn modality_layout(kg: &KnowledgeGraph, cache: &EmbeddingCache) -> Result<Vec<(String, usize)>> {
    kg.modality_vocab()
        .iter()
        .map(|m| {
            cache
                .raw_dim(m)
                .map(|d| (m.clone(), d))
                .ok_or_else(|| Error::MissingSpec(m.clone()))
        })
        .collect()
}

struct Sampler<'a> {
    kg: &'a KnowledgeGraph,
    known: &'a KnownPositives,
    m: usize,
    relaxed: usize,
}

impl Sampler<'_> {
    fn draw(&mut self, triples: &[TripleIx], rng: &mut rng::DetRng) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(triples.len());
        for t in triples {
            let pool = self.kg.nodes_of_modality(self.kg.node_modality(t.tail));
            let d = sample_from_pool(pool, t.tail, self.known.get(&(t.head, t.relation)), self.m, rng)?;
            self.relaxed += d.relaxed as usize;
            out.push(d.tails);
        }
        Ok(out)
    }
}

/// Mean loss over `triples` with negatives drawn from a fixed `seed`.
pub fn mean_loss<T: Real>(
    model: &BridgeModel<T>,
    kg: &KnowledgeGraph,
    cache: &EmbeddingCache,
    triples: &[TripleIx],
    config: &TrainConfig,
    tau: f64,
    seed: u64,
) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Empty("mean_loss"));
    }
    let known = known_positives(triples);
    let mut sampler = Sampler {
        kg,
        known: &known,
        m: config.negatives,
        relaxed: 0,
    };
    let mut rng = rng::seeded(seed);
    let mut total = 0.0;
    for chunk in triples.chunks(config.batch_size) {
        let negs = sampler.draw(chunk, &mut rng)?;
        let in_batch = (config.negative_mode == NegativeMode::InBatchSampled).then_some(&known);
        let batch = prepare_batch(kg, model, cache, chunk, &negs, in_batch)?;
        total += batch_loss(model, &batch, tau)? * chunk.len() as f64;
    }
    Ok(total / triples.len() as f64)
}

const FIXED_DRAW_STREAM: u64 = 0x5e_ed0f_1055;
const MIN_INV_TAU: f32 = 1.0;
const MAX_INV_TAU: f32 = 100.0;

/// Trains a fresh bridge on `split.train`. `observer` is called once per
/// epoch, after the validation ranking.
pub fn train_bridge(
    kg: &KnowledgeGraph,
    split: &TripleSplit,
    cache: &EmbeddingCache,
    bridge: &BridgeConfig,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let train = kg.resolve_all(&split.train)?;
    let valid = kg.resolve_all(&split.valid)?;
    if train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    check_coverage(kg, cache, &train)?;
    check_coverage(kg, cache, &valid)?;

    let mut bridge = bridge.clone();
    if let Some(v) = config.variant {
        bridge.variant = v;
    }
    let mut model = BridgeModel::<f32>::new(bridge, &modality_layout(kg, cache)?, kg.relation_vocab())?;
    let known_train = known_positives(&train);
    let known_eval = known_positives(train.iter().chain(&valid));
    let fixed_seed = derive_seed(config.seed, FIXED_DRAW_STREAM);
    let initial_loss = mean_loss(&model, kg, cache, &train, config, config.tau, fixed_seed)?;

    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &model.params);
    let mut inv_tau = Tensor::scalar((1.0 / config.tau) as f32);
    let mut inv_tau_adam = {
        let mut p = crate::params::ParamStore::new();
        p.add("inv_tau", Tensor::matrix(1, 1, vec![inv_tau.item()])?);
        AdamState::new(AdamConfig::with_lr(config.lr), &p)
    };
    let mut sampler = Sampler {
        kg,
        known: &known_train,
        m: config.negatives,
        relaxed: 0,
    };
    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let snapshot = |model: &BridgeModel<f32>, epoch: usize, history: &[EpochRecord], tau: f64| Checkpoint {
        model: model.clone(),
        train_config: config.clone(),
        fingerprint: *cache.fingerprint(),
        epoch,
        history: history.to_vec(),
        tau,
    };

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::seeded(derive_seed(config.seed, 2 * epoch as u64 + 1)));
        let mut neg_rng = rng::seeded(derive_seed(config.seed, 2 * epoch as u64 + 2));
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let triples: Vec<TripleIx> = chunk.iter().map(|&i| train[i]).collect();
            let negs = sampler.draw(&triples, &mut neg_rng)?;
            let in_batch = (config.negative_mode == NegativeMode::InBatchSampled).then_some(&known_train);
            let batch = prepare_batch(kg, &model, cache, &triples, &negs, in_batch)?;

            let mut tape = Tape::<f32>::new();
            let vars = model.params.bind(&mut tape)?;
            let (temperature, tau_var) = if config.learnable_tau {
                let v = tape.input(Tensor::matrix(1, 1, vec![inv_tau.item()])?)?;
                (Temperature::Learned(v), Some(v))
            } else {
                (Temperature::Fixed(config.tau), None)
            };
            let loss =
                batch_loss_on_tape(&model, &mut tape, &vars, &batch, temperature).map_err(|e| e.at_step(epoch, bi))?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    op: "loss",
                });
            }
            total += lv as f64 * triples.len() as f64;
            let grads = tape.backward(loss).map_err(|e| e.at_step(epoch, bi))?;
            let g = grads.param_grads(&model.params.shapes());
            adam.step(&mut model.params, &g).map_err(|e| e.at_step(epoch, bi))?;
            if let Some(v) = tau_var {
                let gt = grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(&[1, 1]));
                let mut p = crate::params::ParamStore::new();
                p.add("inv_tau", Tensor::matrix(1, 1, vec![inv_tau.item()])?);
                inv_tau_adam.step(&mut p, &[gt]).map_err(|e| e.at_step(epoch, bi))?;
                let x = p.get(0).item().clamp(MIN_INV_TAU, MAX_INV_TAU);
                inv_tau = Tensor::scalar(x);
            }
        }

        let valid_mrr = if valid.is_empty() || config.skip_validation {
            None
        } else {
            let scorer = BridgeScorer { model: &model, cache };
            let report = evaluate_link_prediction(&scorer, kg, &valid, &known_eval, &EvalOptions::default())?;
            Some(report.mrr())
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            mean_loss: total / train.len() as f64,
            valid_mrr,
        };
        history.push(rec);
        observer(&rec);
        if let Some(v) = valid_mrr {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                let tau = 1.0 / inv_tau.item() as f64;
                best = Some((v, snapshot(&model, epoch + 1, &history, tau)));
            }
        }
    }

    let tau = if config.learnable_tau {
        1.0 / inv_tau.item() as f64
    } else {
        config.tau
    };
    let final_loss = mean_loss(&model, kg, cache, &train, config, tau, fixed_seed)?;
    Ok(TrainOutcome {
        last: snapshot(&model, config.epochs, &history, tau),
        best: best.map(|b| b.1),
        initial_loss,
        final_loss,
        relaxed_draws: sampler.relaxed,
    })
}
