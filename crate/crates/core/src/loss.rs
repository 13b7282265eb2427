//! InfoNCE over one positive and `M` corrupted tails.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{dot, l2_norm};

/// Tolerance on the unit-norm precondition.
pub const UNIT_NORM_TOL: f64 = 1e-4;

fn check_unit<T: Real>(v: &[T]) -> Result<()> {
    let n = l2_norm(v).to_f64();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::NotNormalized {
            op: "info_nce",
            norm: n,
        });
    }
    Ok(())
}

/// `-log softmax(s)[0]` where `s = [h·z⁺, h·z⁻_1, ..] / τ`, via a stable
/// log-sum-exp. Accumulates in f64 regardless of `T`.
pub fn info_nce<T: Real, V: AsRef<[T]>>(h_hat: &[T], z_pos: &[T], z_negs: &[V], tau: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(alloc::format!("tau must be positive, got {tau}")));
    }
    if z_negs.is_empty() {
        return Err(Error::Empty("info_nce negatives"));
    }
    check_unit(h_hat)?;
    check_unit(z_pos)?;
    for z in z_negs {
        check_unit(z.as_ref())?;
        if z.as_ref().len() != h_hat.len() {
            return Err(Error::Shape {
                op: "info_nce",
                detail: alloc::format!("negative of width {} vs query {}", z.as_ref().len(), h_hat.len()),
            });
        }
    }
    if z_pos.len() != h_hat.len() {
        return Err(Error::Shape {
            op: "info_nce",
            detail: alloc::format!("positive of width {} vs query {}", z_pos.len(), h_hat.len()),
        });
    }
    let pos = dot(h_hat, z_pos).to_f64() / tau;
    let mut mx = pos;
    let logits: alloc::vec::Vec<f64> = z_negs.iter().map(|z| dot(h_hat, z.as_ref()).to_f64() / tau).collect();
    for &s in &logits {
        mx = mx.max(s);
    }
    let sum = (pos - mx).exp() + logits.iter().map(|s| (s - mx).exp()).sum::<f64>();
    Ok(mx + sum.ln() - pos)
}
