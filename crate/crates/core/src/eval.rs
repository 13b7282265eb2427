//! Link-prediction and semantic-similarity evaluation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeModel, Condition};
use crate::encoder::EmbeddingCache;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, TripleIx};
use crate::metrics::{self, manhattan_similarity_matrix, spearman, upper_triangle};
use crate::negatives::KnownPositives;
use crate::real::Real;
use crate::tensor::{dot, Tensor};

/// Scores candidate tails for `(head, relation)` queries. Indices refer to
/// nodes and relations of the evaluated graph.
pub trait TailScorer {
    fn label(&self) -> String;

    /// One score per candidate, for every query.
    fn score_tails(
        &self,
        kg: &KnowledgeGraph,
        queries: &[(usize, usize)],
        tail_modality: usize,
        candidates: &[usize],
    ) -> Result<Vec<Vec<f64>>>;
}

pub struct BridgeScorer<'a, T> {
    pub model: &'a BridgeModel<T>,
    pub cache: &'a EmbeddingCache,
}

impl<T: Real> BridgeScorer<'_, T> {
    /// Unit query rows for `(head, relation)` pairs aimed at `tail_modality`.
    pub fn queries(&self, kg: &KnowledgeGraph, queries: &[(usize, usize)], tail_modality: usize) -> Result<Tensor<T>> {
        let tm = self.model.modality_index(&kg.modality_vocab()[tail_modality])?;
        let mut heads = Vec::with_capacity(queries.len());
        for &(h, r) in queries {
            let node = kg.node(h);
            let cond = Condition {
                head_modality: self.model.modality_index(&node.modality)?,
                tail_modality: tm,
                relation: self.model.relation_index(&kg.relation_vocab()[r])?,
            };
            heads.push((self.cache.require(&node.id)?, cond));
        }
        self.model.bridge_batch(&heads)
    }
}

const QUERY_CHUNK: usize = 256;

impl<T: Real> TailScorer for BridgeScorer<'_, T> {
    fn label(&self) -> String {
        "bridge".into()
    }

    fn score_tails(
        &self,
        kg: &KnowledgeGraph,
        queries: &[(usize, usize)],
        tail_modality: usize,
        candidates: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        let ids: Vec<&str> = candidates.iter().map(|&c| kg.node(c).id.as_str()).collect();
        let cand = self
            .model
            .embed_candidates(&ids, &kg.modality_vocab()[tail_modality], self.cache)?
            .cast::<f64>();
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(QUERY_CHUNK) {
            let q = self.queries(kg, chunk, tail_modality)?.cast::<f64>();
            for i in 0..chunk.len() {
                out.push((0..cand.rows()).map(|c| dot(q.row(i), cand.row(c))).collect());
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub filtered: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![1, 3, 10],
            filtered: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub hit: f64,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub triples: usize,
    pub queries: usize,
    pub mrr: f64,
    pub at_k: Vec<AtK>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub relation: String,
    pub head_modality: String,
    pub tail_modality: String,
    pub candidates: usize,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub filtered: bool,
    pub ks: Vec<usize>,
    pub tasks: Vec<TaskReport>,
    pub overall: MetricSummary,
    /// Per-triple ranks in the order of the evaluated triples.
    #[serde(skip)]
    pub ranks: Vec<usize>,
}

impl EvalReport {
    pub fn mrr(&self) -> f64 {
        self.overall.mrr
    }

    pub fn hit(&self, k: usize) -> Option<f64> {
        self.overall.at_k.iter().find(|a| a.k == k).map(|a| a.hit)
    }
}

/// Rank of candidate `target` in score order (descending, earlier
/// candidate first on ties), skipping `excluded` candidates.
pub fn rank_in_scores(scores: &[f64], target: usize, excluded: impl Fn(usize) -> bool) -> usize {
    let t = scores[target];
    1 + (0..scores.len())
        .filter(|&i| i != target && !excluded(i))
        .filter(|&i| match scores[i].total_cmp(&t) {
            Ordering::Greater => true,
            Ordering::Equal => i < target,
            Ordering::Less => false,
        })
        .count()
}

struct QueryOutcome {
    retrieved: Vec<usize>,
    relevant: BTreeSet<usize>,
}

fn summarize(ranks: &[usize], queries: &[QueryOutcome], ks: &[usize]) -> Result<MetricSummary> {
    let mut at_k = Vec::with_capacity(ks.len());
    for &k in ks {
        let (mut p, mut r, mut n) = (0.0, 0.0, 0.0);
        for q in queries {
            let (pp, rr) = metrics::precision_recall_at_k(&q.retrieved, &q.relevant, k)?;
            let gains: BTreeMap<usize, f64> = q.relevant.iter().map(|&x| (x, 1.0)).collect();
            p += pp;
            r += rr;
            n += metrics::ndcg_at_k(&q.retrieved, &gains, k);
        }
        let nq = queries.len() as f64;
        at_k.push(AtK {
            k,
            hit: metrics::hit_at_k(ranks, k)?,
            precision: p / nq,
            recall: r / nq,
            ndcg: n / nq,
        });
    }
    Ok(MetricSummary {
        triples: ranks.len(),
        queries: queries.len(),
        mrr: metrics::mrr(ranks)?,
        at_k,
    })
}

/// Tail-prediction metrics over `test`, one task per (relation, head
/// modality, tail modality). Candidates are all nodes of the tail modality.
/// In filtered mode, `known` positives of the same `(head, relation)` are
/// removed before ranking (the target itself always stays).
pub fn evaluate_link_prediction(
    scorer: &dyn TailScorer,
    kg: &KnowledgeGraph,
    test: &[TripleIx],
    known: &KnownPositives,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("evaluate_link_prediction"));
    }
    if options.ks.is_empty() || options.ks.contains(&0) {
        return Err(Error::Config("eval K list must be non-empty and positive".into()));
    }
    let mut by_task: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in test.iter().enumerate() {
        let key = kg.stratum(*t);
        by_task
            .entry((key.relation, key.head_modality, key.tail_modality))
            .or_default()
            .push(i);
    }
    let empty = BTreeSet::new();
    let mut ranks = vec![0usize; test.len()];
    let mut tasks = Vec::new();
    let mut all_queries = Vec::new();
    for ((rel, hm, tm), members) in by_task {
        let candidates = kg.nodes_of_modality(tm);
        let position: BTreeMap<usize, usize> = candidates.iter().enumerate().map(|(p, &c)| (c, p)).collect();
        let mut qkeys: Vec<(usize, usize)> = members.iter().map(|&i| (test[i].head, rel)).collect();
        qkeys.sort_unstable();
        qkeys.dedup();
        let scores = scorer.score_tails(kg, &qkeys, tm, candidates)?;
        let score_of: BTreeMap<(usize, usize), &Vec<f64>> = qkeys.iter().copied().zip(scores.iter()).collect();
        let mut relevant: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();

        let mut task_ranks = Vec::with_capacity(members.len());
        for &i in &members {
            let t = test[i];
            let s = score_of[&(t.head, rel)];
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { op: "score_tails" });
            }
            let filter = if options.filtered {
                known.get(&(t.head, t.relation)).unwrap_or(&empty)
            } else {
                &empty
            };
            let target = *position
                .get(&t.tail)
                .ok_or_else(|| Error::TargetAbsent(kg.node(t.tail).id.clone()))?;
            let rank = rank_in_scores(s, target, |p| filter.contains(&candidates[p]));
            ranks[i] = rank;
            task_ranks.push(rank);
            relevant.entry((t.head, rel)).or_default().insert(t.tail);
        }

        let mut queries = Vec::with_capacity(relevant.len());
        for (key, rel_set) in relevant {
            let s = score_of[&key];
            let filter = if options.filtered {
                known.get(&key).unwrap_or(&empty)
            } else {
                &empty
            };
            let mut order: Vec<usize> = (0..candidates.len())
                .filter(|&p| rel_set.contains(&candidates[p]) || !filter.contains(&candidates[p]))
                .collect();
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            queries.push(QueryOutcome {
                retrieved: order.into_iter().map(|p| candidates[p]).collect(),
                relevant: rel_set,
            });
        }
        let metrics = summarize(&task_ranks, &queries, &options.ks)?;
        all_queries.extend(queries);
        tasks.push(TaskReport {
            relation: kg.relation_vocab()[rel].clone(),
            head_modality: kg.modality_vocab()[hm].clone(),
            tail_modality: kg.modality_vocab()[tm].clone(),
            candidates: candidates.len(),
            metrics,
        });
    }
    let overall = summarize(&ranks, &all_queries, &options.ks)?;
    Ok(EvalReport {
        model: scorer.label(),
        filtered: options.filtered,
        ks: options.ks.clone(),
        tasks,
        overall,
        ranks,
    })
}

/// Manhattan similarity of bridged embeddings of `ids` towards `tail_modality`.
pub fn transformed_similarity<T: Real>(
    model: &BridgeModel<T>,
    cache: &EmbeddingCache,
    ids: &[&str],
    head_modality: &str,
    tail_modality: &str,
    relation: &str,
) -> Result<Tensor<f64>> {
    let cond = model.condition(head_modality, tail_modality, relation)?;
    let rows = ids.iter().map(|id| cache.require(id)).collect::<Result<Vec<_>>>()?;
    let out = model.bridge_rows(&rows, cond)?.cast::<f64>();
    Ok(manhattan_similarity_matrix(&out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectCorrelation {
    pub aspect: String,
    pub spearman: f64,
    pub pairs: usize,
}

/// Spearman correlation between the strict upper triangles of the bridged
/// Manhattan similarity and each gold matrix. `gold` pairs a target
/// modality (the aspect) with a square matrix over `ids`.
pub fn semantic_similarity_eval<T: Real>(
    model: &BridgeModel<T>,
    cache: &EmbeddingCache,
    ids: &[&str],
    head_modality: &str,
    relation: &str,
    gold: &[(String, Tensor<f64>)],
) -> Result<Vec<AspectCorrelation>> {
    let mut out = Vec::with_capacity(gold.len());
    for (aspect, g) in gold {
        if g.shape() != [ids.len(), ids.len()] {
            return Err(Error::Shape {
                op: "semantic_similarity_eval",
                detail: format!(
                    "gold for `{aspect}` is {:?}, expected {}x{}",
                    g.shape(),
                    ids.len(),
                    ids.len()
                ),
            });
        }
        let pred = transformed_similarity(model, cache, ids, head_modality, aspect, relation)?;
        let (p, q) = (upper_triangle(&pred)?, upper_triangle(g)?);
        out.push(AspectCorrelation {
            aspect: aspect.to_string(),
            spearman: spearman(&p, &q)?,
            pairs: p.len(),
        });
    }
    Ok(out)
}
