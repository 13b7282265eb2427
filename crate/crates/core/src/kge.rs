//! Knowledge-graph-embedding baselines: TransE, TransH, TransR, TransD,
//! DistMult, ComplEx and RotatE, trained with tail corruption.
//!
//! Complex-valued families store the real parts in the first half of each
//! row and the imaginary parts in the second half. RotatE relations are
//! phases; their complex form is `(cos θ, sin θ)`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::eval::TailScorer;
use crate::graph::{KnowledgeGraph, TripleIx};
use crate::negatives::{known_positives, sample_from_pool};
use crate::nn;
use crate::params::ParamStore;
use crate::real::Real;
use crate::rng::{self, derive_seed};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeFamily {
    TransE,
    TransH,
    TransR,
    TransD,
    DistMult,
    ComplEx,
    RotatE,
}

impl KgeFamily {
    pub const ALL: [KgeFamily; 7] = [
        KgeFamily::TransE,
        KgeFamily::TransH,
        KgeFamily::TransR,
        KgeFamily::TransD,
        KgeFamily::DistMult,
        KgeFamily::ComplEx,
        KgeFamily::RotatE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KgeFamily::TransE => "transe",
            KgeFamily::TransH => "transh",
            KgeFamily::TransR => "transr",
            KgeFamily::TransD => "transd",
            KgeFamily::DistMult => "distmult",
            KgeFamily::ComplEx => "complex",
            KgeFamily::RotatE => "rotate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        KgeFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown KGE family `{s}`")))
    }

    pub fn is_translational(self) -> bool {
        matches!(
            self,
            KgeFamily::TransE | KgeFamily::TransH | KgeFamily::TransR | KgeFamily::TransD
        )
    }

    pub fn default_loss(self) -> LossKind {
        match self {
            KgeFamily::DistMult | KgeFamily::ComplEx => LossKind::Logistic,
            KgeFamily::RotatE => LossKind::SelfAdversarial,
            _ => LossKind::Margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Margin,
    Logistic,
    SelfAdversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgeTrainConfig {
    pub d_e: usize,
    pub d_r: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: usize,
    /// Falls back to the family default when absent.
    pub loss_kind: Option<LossKind>,
    pub margin: f64,
    /// Temperature of the self-adversarial negative weights.
    pub adversarial_temperature: f64,
    /// Corrupt tails only with nodes of the true tail's modality.
    pub same_modality_negatives: bool,
    pub seed: u64,
}

impl Default for KgeTrainConfig {
    fn default() -> Self {
        KgeTrainConfig {
            d_e: 64,
            d_r: 64,
            lr: 1e-2,
            epochs: 100,
            batch_size: 256,
            negatives: 16,
            loss_kind: None,
            margin: 4.0,
            adversarial_temperature: 1.0,
            same_modality_negatives: false,
            seed: 0,
        }
    }
}

impl KgeTrainConfig {
    pub fn validate(&self, family: KgeFamily) -> Result<()> {
        if self.d_e == 0 || self.d_r == 0 {
            return Err(Error::Config("KGE dimensions must be positive".into()));
        }
        if family != KgeFamily::TransR && self.d_e != self.d_r {
            return Err(Error::Config(format!("{} requires d_e == d_r", family.name())));
        }
        if matches!(family, KgeFamily::ComplEx | KgeFamily::RotatE) && !self.d_e.is_multiple_of(2) {
            return Err(Error::Config(format!("{} requires an even dimension", family.name())));
        }
        if self.batch_size == 0 || self.negatives == 0 {
            return Err(Error::Config("batch_size and negatives must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.loss() == LossKind::Margin && !(self.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        Ok(())
    }

    fn loss(&self) -> LossKind {
        self.loss_kind.unwrap_or(LossKind::Margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgeSlots {
    pub entity: usize,
    pub relation: usize,
    /// TransH normals, TransR matrices or TransD relation projections.
    pub relation_extra: Option<usize>,
    /// TransD entity projections.
    pub entity_extra: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    pub family: KgeFamily,
    pub config: KgeTrainConfig,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub params: ParamStore<f32>,
    pub slots: KgeSlots,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let tau = 2.0 * PI;
    let y = x - tau * libm::floor((x + PI) / tau);
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

impl KgeModel {
    /// Seeded initialization over the nodes and relations of `kg`.
    pub fn new(family: KgeFamily, kg: &KnowledgeGraph, mut config: KgeTrainConfig) -> Result<Self> {
        if config.loss_kind.is_none() {
            config.loss_kind = Some(family.default_loss());
        }
        config.validate(family)?;
        let (n, r) = (kg.nodes().len(), kg.relation_vocab().len().max(1));
        let (de, dr) = (config.d_e, config.d_r);
        let mut rng = rng::seeded(derive_seed(config.seed, 0x4b4745));
        let std = 1.0 / libm::sqrt(de as f64);
        let mut params = ParamStore::new();
        let entity = params.add("entity", nn::normal(&mut rng, &[n, de], std));
        let relation = if family == KgeFamily::RotatE {
            let k = de / 2;
            let phases = (0..r * k).map(|_| rng.gen_range(-PI..PI) as f32).collect();
            params.add("relation", Tensor::matrix(r, k, phases)?)
        } else {
            params.add("relation", nn::normal(&mut rng, &[r, dr], std))
        };
        let relation_extra = match family {
            KgeFamily::TransH => Some(params.add("relation.normal", nn::normal(&mut rng, &[r, de], std))),
            KgeFamily::TransR => {
                let mut m = Tensor::zeros(&[r, dr * de]);
                for rel in 0..r {
                    for i in 0..dr.min(de) {
                        m.row_mut(rel)[i * de + i] = 1.0;
                    }
                }
                Some(params.add("relation.matrix", m))
            }
            KgeFamily::TransD => Some(params.add("relation.proj", nn::normal(&mut rng, &[r, dr], std))),
            _ => None,
        };
        let entity_extra = match family {
            KgeFamily::TransD => Some(params.add("entity.proj", nn::normal(&mut rng, &[n, de], std))),
            _ => None,
        };
        let mut model = KgeModel {
            family,
            config,
            entities: kg.nodes().iter().map(|x| x.id.clone()).collect(),
            relations: kg.relation_vocab().to_vec(),
            params,
            slots: KgeSlots {
                entity,
                relation,
                relation_extra,
                entity_extra,
            },
        };
        model.apply_constraints();
        Ok(model)
    }

    fn loss_kind(&self) -> LossKind {
        self.config.loss_kind.unwrap_or(self.family.default_loss())
    }

    /// Entity norms capped at 1 for translational families; RotatE phases
    /// wrapped into `(-π, π]`.
    pub fn apply_constraints(&mut self) {
        if self.family.is_translational() {
            let ent = self.params.get_mut(self.slots.entity);
            for i in 0..ent.rows() {
                let row = ent.row_mut(i);
                let n = crate::tensor::l2_norm(row);
                if n > 1.0 {
                    row.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
        if self.family == KgeFamily::RotatE {
            let rel = self.params.get_mut(self.slots.relation);
            for x in rel.data_mut() {
                *x = wrap_phase(*x as f64) as f32;
            }
        }
    }

    /// Unit-modulus complex coordinates of a RotatE relation.
    pub fn rotation(&self, relation: usize) -> Option<Vec<(f64, f64)>> {
        (self.family == KgeFamily::RotatE).then(|| {
            self.params
                .get(self.slots.relation)
                .row(relation)
                .iter()
                .map(|&p| (libm::cos(p as f64), libm::sin(p as f64)))
                .collect()
        })
    }

    fn check_ids(&self, h: &[usize], r: &[usize], t: &[usize]) -> Result<()> {
        if let Some(&x) = h.iter().chain(t).find(|&&x| x >= self.entities.len()) {
            return Err(Error::UnknownNode(format!("entity index {x}")));
        }
        if let Some(&x) = r.iter().find(|&&x| x >= self.relations.len()) {
            return Err(Error::UnknownRelation(format!("relation index {x}")));
        }
        Ok(())
    }

    /// Recorded scores `[n x 1]` of triples `(h[i], r[i], t[i])`.
    pub fn score_on_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        h: &[usize],
        r: &[usize],
        t: &[usize],
    ) -> Result<Var> {
        let s = &self.slots;
        let eh = tape.gather_rows(vars[s.entity], h)?;
        let et = tape.gather_rows(vars[s.entity], t)?;
        let negate_norm = |tape: &mut Tape<T>, d: Var| -> Result<Var> {
            let n = tape.row_norm(d)?;
            tape.scale(n, -T::ONE)
        };
        match self.family {
            KgeFamily::TransE => {
                let er = tape.gather_rows(vars[s.relation], r)?;
                let x = tape.add(eh, er)?;
                let d = tape.sub(x, et)?;
                negate_norm(tape, d)
            }
            KgeFamily::TransH => {
                let er = tape.gather_rows(vars[s.relation], r)?;
                let n = tape.gather_rows(vars[s.relation_extra.expect("transh normals")], r)?;
                let n = tape.normalize_rows(n)?;
                let project = |tape: &mut Tape<T>, e: Var| -> Result<Var> {
                    let ne = tape.mul(n, e)?;
                    let c = tape.row_sum(ne)?;
                    let off = tape.mul_column(n, c)?;
                    tape.sub(e, off)
                };
                let ph = project(tape, eh)?;
                let pt = project(tape, et)?;
                let x = tape.add(ph, er)?;
                let d = tape.sub(x, pt)?;
                negate_norm(tape, d)
            }
            KgeFamily::TransR => {
                let er = tape.gather_rows(vars[s.relation], r)?;
                let m = vars[s.relation_extra.expect("transr matrices")];
                let mh = tape.batched_matvec(m, eh, r, self.config.d_r)?;
                let mt = tape.batched_matvec(m, et, r, self.config.d_r)?;
                let x = tape.add(mh, er)?;
                let d = tape.sub(x, mt)?;
                negate_norm(tape, d)
            }
            KgeFamily::TransD => {
                let er = tape.gather_rows(vars[s.relation], r)?;
                let rp = tape.gather_rows(vars[s.relation_extra.expect("transd relation proj")], r)?;
                let ep = vars[s.entity_extra.expect("transd entity proj")];
                let hp = tape.gather_rows(ep, h)?;
                let tp = tape.gather_rows(ep, t)?;
                let project = |tape: &mut Tape<T>, e: Var, p: Var| -> Result<Var> {
                    let pe = tape.mul(p, e)?;
                    let c = tape.row_sum(pe)?;
                    let off = tape.mul_column(rp, c)?;
                    tape.add(e, off)
                };
                let ph = project(tape, eh, hp)?;
                let pt = project(tape, et, tp)?;
                let x = tape.add(ph, er)?;
                let d = tape.sub(x, pt)?;
                negate_norm(tape, d)
            }
            KgeFamily::DistMult => {
                let er = tape.gather_rows(vars[s.relation], r)?;
                // h∘t first so the score is exactly symmetric in h and t
                let ht = tape.mul(eh, et)?;
                let x = tape.mul(ht, er)?;
                tape.row_sum(x)
            }
            KgeFamily::ComplEx => {
                let er = tape.gather_rows(vars[s.relation], r)?;
                let k = self.config.d_e / 2;
                let (hr, hi) = (tape.slice_cols(eh, 0, k)?, tape.slice_cols(eh, k, k)?);
                let (tr, ti) = (tape.slice_cols(et, 0, k)?, tape.slice_cols(et, k, k)?);
                let (rr, ri) = (tape.slice_cols(er, 0, k)?, tape.slice_cols(er, k, k)?);
                let a = tape.mul(hr, tr)?;
                let b = tape.mul(hi, ti)?;
                let re = tape.add(a, b)?;
                let c = tape.mul(hr, ti)?;
                let d = tape.mul(hi, tr)?;
                let im = tape.sub(c, d)?;
                let x = tape.mul(rr, re)?;
                let y = tape.mul(ri, im)?;
                let sum = tape.add(x, y)?;
                tape.row_sum(sum)
            }
            KgeFamily::RotatE => {
                let k = self.config.d_e / 2;
                let p = tape.gather_rows(vars[s.relation], r)?;
                let (c, sn) = (tape.cos(p)?, tape.sin(p)?);
                let (hr, hi) = (tape.slice_cols(eh, 0, k)?, tape.slice_cols(eh, k, k)?);
                let (tr, ti) = (tape.slice_cols(et, 0, k)?, tape.slice_cols(et, k, k)?);
                let a = tape.mul(hr, c)?;
                let b = tape.mul(hi, sn)?;
                let rot_re = tape.sub(a, b)?;
                let a = tape.mul(hr, sn)?;
                let b = tape.mul(hi, c)?;
                let rot_im = tape.add(a, b)?;
                let dr = tape.sub(rot_re, tr)?;
                let di = tape.sub(rot_im, ti)?;
                let d = tape.concat_cols(&[dr, di])?;
                negate_norm(tape, d)
            }
        }
    }

    /// Scores of many triples at once.
    pub fn score_many(&self, h: &[usize], r: &[usize], t: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(h, r, t)?;
        if h.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let s = self.score_on_tape(&mut tape, &vars, h, r, t)?;
        Ok(tape.value(s).data().iter().map(|&x| x as f64).collect())
    }

    pub fn entity_index(&self, id: &str) -> Result<usize> {
        self.entities
            .iter()
            .position(|e| e == id)
            .ok_or_else(|| Error::UnknownNode(id.into()))
    }
}

/// Plausibility of `(h, r, t)`; higher is more plausible.
pub fn kge_score(model: &KgeModel, h: usize, r: usize, t: usize) -> Result<f64> {
    Ok(model.score_many(&[h], &[r], &[t])?[0])
}

/// Candidates by descending score with filtered ids removed; ties go to the
/// smaller entity id.
pub fn kge_rank_tails(
    model: &KgeModel,
    h: usize,
    r: usize,
    candidates: &[usize],
    filter: &BTreeSet<usize>,
) -> Result<Vec<(usize, f64)>> {
    let kept: Vec<usize> = candidates.iter().copied().filter(|c| !filter.contains(c)).collect();
    let scores = model.score_many(&vec![h; kept.len()], &vec![r; kept.len()], &kept)?;
    let mut out: Vec<(usize, f64)> = kept.into_iter().zip(scores).collect();
    out.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| model.entities[a.0].cmp(&model.entities[b.0]))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgeEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Trains a fresh model on `train`. `observer` sees the model after every epoch.
pub fn train_kge(
    kg: &KnowledgeGraph,
    train: &[TripleIx],
    family: KgeFamily,
    config: &KgeTrainConfig,
    observer: &mut dyn FnMut(&KgeEpoch, &KgeModel),
) -> Result<(KgeModel, Vec<KgeEpoch>)> {
    let mut model = KgeModel::new(family, kg, config.clone())?;
    if config.epochs > 0 && train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    let cfg = model.config.clone();
    let loss_kind = model.loss_kind();
    let known = known_positives(train);
    let all: Vec<usize> = (0..kg.nodes().len()).collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let m = cfg.negatives;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::seeded(derive_seed(cfg.seed, 2 * epoch as u64 + 1)));
        let mut neg_rng = rng::seeded(derive_seed(cfg.seed, 2 * epoch as u64 + 2));
        let mut total = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let b = batch.len();
            let (mut h, mut r, mut t) = (Vec::with_capacity(b), Vec::with_capacity(b), Vec::with_capacity(b));
            let (mut nh, mut nr, mut nt) = (Vec::new(), Vec::new(), Vec::new());
            for &i in batch {
                let x = train[i];
                h.push(x.head);
                r.push(x.relation);
                t.push(x.tail);
                let pool = if cfg.same_modality_negatives {
                    kg.nodes_of_modality(kg.node_modality(x.tail))
                } else {
                    &all[..]
                };
                let draw = sample_from_pool(pool, x.tail, known.get(&(x.head, x.relation)), m, &mut neg_rng)?;
                nh.extend(core::iter::repeat_n(x.head, m));
                nr.extend(core::iter::repeat_n(x.relation, m));
                nt.extend(draw.tails);
            }

            let mut tape = Tape::<f32>::new();
            let vars = model.params.bind(&mut tape)?;
            let step = |tape: &mut Tape<f32>| -> Result<Var> {
                let pos = model.score_on_tape(tape, &vars, &h, &r, &t)?;
                let neg = model.score_on_tape(tape, &vars, &nh, &nr, &nt)?;
                let gamma = cfg.margin as f32;
                match loss_kind {
                    LossKind::Margin => {
                        let rep: Vec<usize> = (0..b * m).map(|j| j / m).collect();
                        let p = tape.gather_rows(pos, &rep)?;
                        let diff = tape.sub(neg, p)?;
                        let x = tape.add_scalar(diff, gamma)?;
                        let x = tape.relu(x)?;
                        tape.mean(x)
                    }
                    LossKind::Logistic => {
                        let np = tape.scale(pos, -1.0)?;
                        let lp = tape.softplus(np)?;
                        let lp = tape.mean(lp)?;
                        let ln = tape.softplus(neg)?;
                        let ln = tape.mean(ln)?;
                        tape.add(lp, ln)
                    }
                    LossKind::SelfAdversarial => {
                        let alpha = cfg.adversarial_temperature as f32;
                        let nv = tape.value(neg).data().to_vec();
                        let mut w = Vec::with_capacity(nv.len());
                        for g in nv.chunks(m) {
                            let scaled: Vec<f32> = g.iter().map(|&x| alpha * x).collect();
                            let mut p = scaled.clone();
                            crate::tensor::softmax_in_place(&mut p);
                            w.extend(p);
                        }
                        let wv = tape.input(Tensor::matrix(b * m, 1, w)?)?;
                        let np = tape.scale(pos, -1.0)?;
                        let np = tape.add_scalar(np, -gamma)?;
                        let lp = tape.softplus(np)?;
                        let lp = tape.mean(lp)?;
                        let shifted = tape.add_scalar(neg, gamma)?;
                        let ln = tape.softplus(shifted)?;
                        let ln = tape.mul(ln, wv)?;
                        let ln = tape.sum(ln)?;
                        let ln = tape.scale(ln, 1.0 / b as f32)?;
                        tape.add(lp, ln)
                    }
                }
            };
            let loss = step(&mut tape).map_err(|e| e.at_step(epoch, bi))?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    op: "loss",
                });
            }
            total += lv as f64 * b as f64;
            let grads = tape.backward(loss).map_err(|e| e.at_step(epoch, bi))?;
            let g = grads.param_grads(&model.params.shapes());
            adam.step(&mut model.params, &g).map_err(|e| e.at_step(epoch, bi))?;
            model.apply_constraints();
        }
        let rec = KgeEpoch {
            epoch: epoch + 1,
            mean_loss: total / train.len() as f64,
        };
        observer(&rec, &model);
        history.push(rec);
    }
    Ok((model, history))
}

const CANDIDATE_CHUNK: usize = 4096;

impl TailScorer for KgeModel {
    fn label(&self) -> String {
        self.family.name().into()
    }

    fn score_tails(
        &self,
        kg: &KnowledgeGraph,
        queries: &[(usize, usize)],
        _tail_modality: usize,
        candidates: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        if kg.nodes().len() != self.entities.len() {
            return Err(Error::Config("KGE model was trained on a different graph".into()));
        }
        let mut out = Vec::with_capacity(queries.len());
        for &(h, r) in queries {
            let mut scores = Vec::with_capacity(candidates.len());
            for chunk in candidates.chunks(CANDIDATE_CHUNK) {
                scores.extend(self.score_many(&vec![h; chunk.len()], &vec![r; chunk.len()], chunk)?);
            }
            out.push(scores);
        }
        Ok(out)
    }
}
