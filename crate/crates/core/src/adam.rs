//! Bias-corrected Adam.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let shapes = params.shapes();
        AdamState {
            config,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        for (slot, g) in grads.iter().enumerate() {
            if g.shape() != params.get(slot).shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!(
                        "`{}`: {:?} vs {:?}",
                        params.name(slot),
                        g.shape(),
                        params.get(slot).shape()
                    ),
                });
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let step = T::from_f64(c.lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(c.eps);
        for (slot, g) in grads.iter().enumerate() {
            let p = params.get_mut(slot).data_mut();
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                p[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
