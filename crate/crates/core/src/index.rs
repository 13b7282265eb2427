//! Exact inner-product retrieval over unit rows.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeModel;
use crate::encoder::EmbeddingCache;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Node};
use crate::real::Real;
use crate::tensor::{dot, l2_norm};

pub const ROW_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    modality: String,
    ids: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
    filters: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub hits: Vec<ScoredId>,
    /// Set when fewer than the requested `k` candidates exist.
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_modality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_modality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

/// Descending score, then ascending id.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

fn check_unit(v: &[f64], what: &'static str) -> Result<()> {
    let n = l2_norm(v);
    if !n.is_finite() || (n - 1.0).abs() > ROW_NORM_TOL {
        return Err(Error::NotNormalized { op: what, norm: n });
    }
    Ok(())
}

impl EmbeddingIndex {
    /// `rows` is row-major `ids.len() x dim`; every row must be unit-norm.
    pub fn new(modality: impl Into<String>, ids: Vec<String>, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != ids.len() * dim {
            return Err(Error::Shape {
                op: "build_index",
                detail: alloc::format!("{} values for {} ids of width {dim}", rows.len(), ids.len()),
            });
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for i in 0..ids.len() {
            check_unit(&rows[i * dim..(i + 1) * dim], "build_index")?;
        }
        Ok(EmbeddingIndex {
            modality: modality.into(),
            ids,
            dim,
            rows,
            filters: BTreeMap::new(),
        })
    }

    pub fn with_filters(mut self, filters: BTreeMap<String, BTreeSet<String>>) -> Self {
        self.filters = filters;
        self
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Inner products of `query` with every row, in row order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::Shape {
                op: "top_k",
                detail: alloc::format!("query of width {} against index of width {}", query.len(), self.dim),
            });
        }
        check_unit(query, "top_k")?;
        Ok((0..self.len()).map(|i| dot(self.row(i), query)).collect())
    }

    /// Exact top `k` by inner product with id tie-break.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<RankedResult> {
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| rank_order((scores[a], &self.ids[a]), (scores[b], &self.ids[b])));
        order.truncate(k);
        Ok(RankedResult {
            hits: order
                .into_iter()
                .map(|i| ScoredId {
                    id: self.ids[i].clone(),
                    score: scores[i],
                })
                .collect(),
            truncated: k > self.len(),
            head_modality: None,
            tail_modality: None,
            relation: None,
        })
    }

    /// 1-based rank of `target`. With a filter key, known positives stored
    /// under that key (other than the target) are dropped first.
    pub fn rank_of_target(&self, query: &[f64], target: &str, filter_key: Option<&str>) -> Result<usize> {
        let t = self
            .position(target)
            .ok_or_else(|| Error::TargetAbsent(target.to_string()))?;
        let scores = self.scores(query)?;
        let skip = filter_key.and_then(|k| self.filters.get(k));
        let mut rank = 1;
        for (i, &s) in scores.iter().enumerate() {
            if i == t || skip.is_some_and(|f| f.contains(&self.ids[i])) {
                continue;
            }
            if rank_order((s, &self.ids[i]), (scores[t], target)) == Ordering::Less {
                rank += 1;
            }
        }
        Ok(rank)
    }
}

/// Index over `nodes` (one modality). Rows are `normalize(p(raw))` under
/// `model`, or `normalize(raw)` without one.
pub fn build_index<T: Real>(
    nodes: &[&Node],
    cache: &EmbeddingCache,
    model: Option<&BridgeModel<T>>,
) -> Result<EmbeddingIndex> {
    let first = nodes.first().ok_or(Error::Empty("build_index"))?;
    let modality = first.modality.clone();
    if let Some(n) = nodes.iter().find(|n| n.modality != modality) {
        return Err(Error::MixedModality(modality, n.modality.clone()));
    }
    let ids: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();
    let mut seen = BTreeSet::new();
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    match model {
        Some(m) => {
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let t = m.embed_candidates(&refs, &modality, cache)?;
            let dim = t.cols();
            EmbeddingIndex::new(modality, ids, dim, t.data().iter().map(|x| x.to_f64()).collect())
        }
        None => {
            let mut rows = Vec::new();
            let mut dim = 0;
            for id in &ids {
                let raw: Vec<f64> = cache.require(id)?.iter().map(|&x| x as f64).collect();
                dim = raw.len();
                rows.extend(crate::bridge::l2_normalize(&raw)?);
            }
            EmbeddingIndex::new(modality, ids, dim, rows)
        }
    }
}

/// Top `k` tails of `tail_modality` for `node` under `relation`, using
/// the bridged query and an index over every node of that modality.
pub fn retrieve_tails<T: Real>(
    model: &BridgeModel<T>,
    cache: &EmbeddingCache,
    kg: &KnowledgeGraph,
    node: &str,
    tail_modality: &str,
    relation: &str,
    k: usize,
) -> Result<RankedResult> {
    let head = kg
        .node_by_id(node)
        .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
    let tm = kg.modality_index(tail_modality)?;
    let cond = model.condition(&head.modality, tail_modality, relation)?;
    let candidates: Vec<&Node> = kg.nodes_of_modality(tm).iter().map(|&i| kg.node(i)).collect();
    let index = build_index(&candidates, cache, Some(model))?;
    let q = model.bridge_rows(&[cache.require(node)?], cond)?;
    let query: Vec<f64> = q.row(0).iter().map(|x| x.to_f64()).collect();
    let mut out = index.top_k(&query, k)?;
    out.head_modality = Some(head.modality.clone());
    out.tail_modality = Some(tail_modality.to_string());
    out.relation = Some(relation.to_string());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn idx() -> EmbeddingIndex {
        EmbeddingIndex::new(
            "m",
            vec!["b".into(), "a".into(), "c".into()],
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8],
        )
        .unwrap()
    }

    #[test]
    fn exact_match_ranks_first() {
        let r = idx().top_k(&[0.0, 1.0], 2).unwrap();
        assert_eq!(r.hits[0].id, "a");
        assert_eq!(r.hits[0].score, 1.0);
        assert!(!r.truncated);
        assert!(idx().top_k(&[0.0, 1.0], 5).unwrap().truncated);
    }

    #[test]
    fn ties_break_by_id() {
        let i = EmbeddingIndex::new("m", vec!["z".into(), "y".into()], 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let r = i.top_k(&[0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(r.hits.iter().map(|h| h.id.as_str()).collect::<Vec<_>>(), vec!["y", "z"]);
        assert_eq!(i.rank_of_target(&[0.0, 0.0, 1.0], "z", None).unwrap(), 2);
    }

    #[test]
    fn filtered_rank() {
        let mut f = BTreeMap::new();
        f.insert(
            "q".to_string(),
            ["a".to_string(), "c".to_string()].into_iter().collect(),
        );
        let i = idx().with_filters(f);
        assert_eq!(i.rank_of_target(&[0.0, 1.0], "b", None).unwrap(), 3);
        assert_eq!(i.rank_of_target(&[0.0, 1.0], "b", Some("q")).unwrap(), 1);
        assert_eq!(i.rank_of_target(&[0.0, 1.0], "c", Some("q")).unwrap(), 1);
        assert_eq!(
            i.rank_of_target(&[0.0, 1.0], "x", None).unwrap_err(),
            Error::TargetAbsent("x".into())
        );
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            EmbeddingIndex::new("m", vec!["a".into(), "a".into()], 1, vec![1.0, 1.0]),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            EmbeddingIndex::new("m", vec!["a".into()], 2, vec![1.0, 1.0]),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn mixed_modality_is_rejected() {
        let a = Node::new("a", "x", "f");
        let b = Node::new("b", "y", "f");
        let cache = EmbeddingCache::new(vec![], [0; 32]).unwrap();
        assert!(matches!(
            build_index::<f32>(&[&a, &b], &cache, None),
            Err(Error::MixedModality(_, _))
        ));
    }
}
