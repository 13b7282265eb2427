//! Central finite-difference validation of analytic gradients.

use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::error::Result;
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::Tensor;

pub const MIN_SAMPLED_COORDINATES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coordinates: usize,
    /// `(parameter name, offset, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(alloc::string::String, usize, f64, f64)>,
}

/// Compares `analytic` against `(f(θ+εe) − f(θ−εe)) / 2ε` on a seeded sample
/// of `max(samples, 200)` coordinates (or all of them when fewer exist).
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(
    f: F,
    params: &ParamStore<f64>,
    analytic: &[Tensor<f64>],
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<f64>,
{
    let total = params.num_scalars();
    let want = samples.max(MIN_SAMPLED_COORDINATES).min(total);
    let mut rng = rng::seeded(seed);
    let mut coords: Vec<usize> = sample(&mut rng, total, want).into_vec();
    coords.sort_unstable();

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coordinates: coords.len(),
        worst: None,
    };
    for flat in coords {
        let (slot, off) = params.locate(flat);
        let orig = params.get(slot).data()[off];
        probe.get_mut(slot).data_mut()[off] = orig + eps;
        let up = f(&probe)?;
        probe.get_mut(slot).data_mut()[off] = orig - eps;
        let down = f(&probe)?;
        probe.get_mut(slot).data_mut()[off] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[slot].data()[off];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = rel;
            report.worst = Some((params.name(slot).into(), off, a, numeric));
        }
    }
    Ok(report)
}
