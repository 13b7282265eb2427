//! Ranking and correlation metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_ranks(ranks: &[usize], op: &'static str) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Empty(op));
    }
    if ranks.contains(&0) {
        return Err(Error::Config("ranks are 1-based".into()));
    }
    Ok(())
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    check_ranks(ranks, "mrr")?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn hit_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, "hit_at_k")?;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// MRR of a uniformly random ranking of `n` candidates with one target.
pub fn expected_random_mrr(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}

/// `(|top-k ∩ relevant| / k, |top-k ∩ relevant| / |relevant|)`.
pub fn precision_recall_at_k<I: Ord>(retrieved: &[I], relevant: &BTreeSet<I>, k: usize) -> Result<(f64, f64)> {
    if relevant.is_empty() {
        return Err(Error::Empty("precision_recall_at_k relevant set"));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let hits = retrieved.iter().take(k).filter(|id| relevant.contains(id)).count() as f64;
    Ok((hits / k as f64, hits / relevant.len() as f64))
}

/// DCG of the top `k` with `gain / log2(i + 1)` discounts, divided by the
/// ideal DCG; zero when no item has positive gain.
pub fn ndcg_at_k<I: Ord>(retrieved: &[I], relevance: &BTreeMap<I, f64>, k: usize) -> f64 {
    let discount = |i: usize| 1.0 / libm::log2(i as f64 + 1.0);
    let dcg: f64 = retrieved
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| relevance.get(id).copied().unwrap_or(0.0) * discount(i + 1))
        .sum();
    let mut gains: Vec<f64> = relevance.values().copied().collect();
    gains.sort_by(|a, b| b.total_cmp(a));
    let ideal: f64 = gains.iter().take(k).enumerate().map(|(i, g)| g * discount(i + 1)).sum();
    if ideal > 0.0 {
        dcg / ideal
    } else {
        0.0
    }
}

/// `S[i][j] = -Σ_k |x_ik - x_jk|` for the rows of `x`.
pub fn manhattan_similarity_matrix(x: &Tensor<f64>) -> Tensor<f64> {
    let n = x.rows();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).abs()).sum();
            out.data_mut()[i * n + j] = -d;
            out.data_mut()[j * n + i] = -d;
        }
    }
    out
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "pearson",
            detail: alloc::format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("pearson"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.iter().chain(gold).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "spearman" });
    }
    pearson(&average_ranks(pred), &average_ranks(gold))
}

/// Strict upper triangle of a square matrix, row by row.
pub fn upper_triangle(m: &Tensor<f64>) -> Result<Vec<f64>> {
    let n = m.rows();
    if m.cols() != n || m.shape().len() != 2 {
        return Err(Error::Shape {
            op: "upper_triangle",
            detail: alloc::format!("{:?} is not square", m.shape()),
        });
    }
    Ok((0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| m.at(i, j))
        .collect())
}
