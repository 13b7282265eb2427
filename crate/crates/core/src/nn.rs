//! Transformer building blocks recorded on a [`Tape`].
//!
//! Blocks are pre-norm: `x + Attn(LN(x))`, then `x + FF(LN(x))` with a
//! GELU feed-forward of width `ff_mult * d`. Sequences are processed as
//! consecutive groups of `group` rows so a whole batch runs in one pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::rng::{gaussian, DetRng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub fn xavier_uniform<T: Real>(rng: &mut DetRng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out)
        .map(|_| T::from_f64(rng.gen_range(-a..a)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches")
}

pub fn normal<T: Real>(rng: &mut DetRng, shape: &[usize], std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| T::from_f64(gaussian(rng) * std)).collect(),
    )
    .expect("shape matches")
}

/// `x W + b` for `x: [N x in]`, `W: [in x out]`.
pub fn linear<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub attn: AttentionVars,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub fn attention_layer<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w: &AttentionVars,
    group: usize,
    heads: usize,
) -> Result<Var> {
    let q = linear(tape, x, w.wq, w.bq)?;
    let k = linear(tape, x, w.wk, w.bk)?;
    let v = linear(tape, x, w.wv, w.bv)?;
    let a = tape.attention(q, k, v, group, heads)?;
    linear(tape, a, w.wo, w.bo)
}

pub fn block<T: Real>(tape: &mut Tape<T>, x: Var, w: &BlockVars, group: usize, heads: usize) -> Result<Var> {
    let n1 = tape.layer_norm(x, w.ln1_gain, w.ln1_bias)?;
    let a = attention_layer(tape, n1, &w.attn, group, heads)?;
    let x = tape.add(x, a)?;
    let n2 = tape.layer_norm(x, w.ln2_gain, w.ln2_bias)?;
    let h = linear(tape, n2, w.w1, w.b1)?;
    let h = tape.gelu(h)?;
    let f = linear(tape, h, w.w2, w.b2)?;
    tape.add(x, f)
}

pub fn encoder<T: Real>(
    tape: &mut Tape<T>,
    mut x: Var,
    blocks: &[BlockVars],
    group: usize,
    heads: usize,
) -> Result<Var> {
    for b in blocks {
        x = block(tape, x, b, group, heads)?;
    }
    Ok(x)
}

/// Parameter slots of one block inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSlots {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl BlockSlots {
    /// Xavier-uniform projections; attention and feed-forward output
    /// projections start at zero so a fresh block is the identity map.
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d: usize,
        hidden: usize,
        rng: &mut DetRng,
    ) -> Self {
        let mut add = |name: &str, t: Tensor<T>| store.add(format!("{prefix}.{name}"), t);
        BlockSlots {
            ln1_gain: add("ln1.gain", Tensor::filled(&[d], T::ONE)),
            ln1_bias: add("ln1.bias", Tensor::zeros(&[d])),
            wq: add("attn.wq", xavier_uniform(rng, d, d)),
            bq: add("attn.bq", Tensor::zeros(&[d])),
            wk: add("attn.wk", xavier_uniform(rng, d, d)),
            bk: add("attn.bk", Tensor::zeros(&[d])),
            wv: add("attn.wv", xavier_uniform(rng, d, d)),
            bv: add("attn.bv", Tensor::zeros(&[d])),
            wo: add("attn.wo", Tensor::zeros(&[d, d])),
            bo: add("attn.bo", Tensor::zeros(&[d])),
            ln2_gain: add("ln2.gain", Tensor::filled(&[d], T::ONE)),
            ln2_bias: add("ln2.bias", Tensor::zeros(&[d])),
            w1: add("ff.w1", xavier_uniform(rng, d, hidden)),
            b1: add("ff.b1", Tensor::zeros(&[hidden])),
            w2: add("ff.w2", Tensor::zeros(&[hidden, d])),
            b2: add("ff.b2", Tensor::zeros(&[d])),
        }
    }

    pub fn vars(&self, v: &[Var]) -> BlockVars {
        BlockVars {
            ln1_gain: v[self.ln1_gain],
            ln1_bias: v[self.ln1_bias],
            attn: AttentionVars {
                wq: v[self.wq],
                bq: v[self.bq],
                wk: v[self.wk],
                bk: v[self.bk],
                wv: v[self.wv],
                bv: v[self.bv],
                wo: v[self.wo],
                bo: v[self.bo],
            },
            ln2_gain: v[self.ln2_gain],
            ln2_bias: v[self.ln2_bias],
            w1: v[self.w1],
            b1: v[self.b1],
            w2: v[self.w2],
            b2: v[self.b2],
        }
    }
}

/// Owned attention weights for standalone evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
}

impl<T: Real> AttentionWeights<T> {
    fn push(&self, tape: &mut Tape<T>) -> Result<AttentionVars> {
        Ok(AttentionVars {
            wq: tape.input(self.wq.clone())?,
            bq: tape.input(self.bq.clone())?,
            wk: tape.input(self.wk.clone())?,
            bk: tape.input(self.bk.clone())?,
            wv: tape.input(self.wv.clone())?,
            bv: tape.input(self.bv.clone())?,
            wo: tape.input(self.wo.clone())?,
            bo: tape.input(self.bo.clone())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub attn: AttentionWeights<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> BlockWeights<T> {
    pub fn from_store(store: &ParamStore<T>, slots: &BlockSlots) -> Self {
        let g = |s: usize| store.get(s).clone();
        BlockWeights {
            ln1_gain: g(slots.ln1_gain),
            ln1_bias: g(slots.ln1_bias),
            attn: AttentionWeights {
                wq: g(slots.wq),
                bq: g(slots.bq),
                wk: g(slots.wk),
                bk: g(slots.bk),
                wv: g(slots.wv),
                bv: g(slots.bv),
                wo: g(slots.wo),
                bo: g(slots.bo),
            },
            ln2_gain: g(slots.ln2_gain),
            ln2_bias: g(slots.ln2_bias),
            w1: g(slots.w1),
            b1: g(slots.b1),
            w2: g(slots.w2),
            b2: g(slots.b2),
        }
    }

    fn push(&self, tape: &mut Tape<T>) -> Result<BlockVars> {
        Ok(BlockVars {
            ln1_gain: tape.input(self.ln1_gain.clone())?,
            ln1_bias: tape.input(self.ln1_bias.clone())?,
            attn: self.attn.push(tape)?,
            ln2_gain: tape.input(self.ln2_gain.clone())?,
            ln2_bias: tape.input(self.ln2_bias.clone())?,
            w1: tape.input(self.w1.clone())?,
            b1: tape.input(self.b1.clone())?,
            w2: tape.input(self.w2.clone())?,
            b2: tape.input(self.b2.clone())?,
        })
    }
}

/// Self-attention over a single sequence `x: [L x d]`.
pub fn multi_head_attention<T: Real>(x: &Tensor<T>, heads: usize, w: &AttentionWeights<T>) -> Result<Tensor<T>> {
    if heads == 0 || !x.cols().is_multiple_of(heads) {
        return Err(Error::Shape {
            op: "multi_head_attention",
            detail: format!("width {} not divisible by {heads} heads", x.cols()),
        });
    }
    let mut tape = Tape::new();
    let xv = tape.input(x.clone())?;
    let wv = w.push(&mut tape)?;
    let out = attention_layer(&mut tape, xv, &wv, x.rows(), heads)?;
    Ok(tape.value(out).clone())
}

/// Runs the block stack over a single sequence `z: [L x d]`.
pub fn transformer_encoder_forward<T: Real>(
    z: &Tensor<T>,
    blocks: &[BlockWeights<T>],
    heads: usize,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let zv = tape.input(z.clone())?;
    let vars = blocks.iter().map(|b| b.push(&mut tape)).collect::<Result<Vec<_>>>()?;
    let out = encoder(&mut tape, zv, &vars, z.rows(), heads)?;
    Ok(tape.value(out).clone())
}
