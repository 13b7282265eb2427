//! Tail corruption for contrastive and KGE training.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, TripleIx};
use crate::rng::DetRng;

/// `(head, relation) -> tails` for a set of triples.
pub type KnownPositives = BTreeMap<(usize, usize), BTreeSet<usize>>;

pub fn known_positives<'a>(triples: impl IntoIterator<Item = &'a TripleIx>) -> KnownPositives {
    let mut out = KnownPositives::new();
    for t in triples {
        out.entry((t.head, t.relation)).or_default().insert(t.tail);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeDraw {
    pub tails: Vec<usize>,
    /// True when too few candidates survived the filter and only the true
    /// tail was excluded.
    pub relaxed: bool,
}

/// Draws `m` distinct candidates from `pool`, never `true_tail` and, when
/// possible, none of `known`.
pub fn sample_from_pool(
    pool: &[usize],
    true_tail: usize,
    known: Option<&BTreeSet<usize>>,
    m: usize,
    rng: &mut DetRng,
) -> Result<NegativeDraw> {
    if m == 0 {
        return Err(Error::Config("number of negatives must be at least 1".into()));
    }
    let filtered: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&c| c != true_tail && !known.is_some_and(|k| k.contains(&c)))
        .collect();
    let (eligible, relaxed) = if filtered.len() >= m {
        (filtered, false)
    } else {
        let loose: Vec<usize> = pool.iter().copied().filter(|&c| c != true_tail).collect();
        if loose.len() < m {
            return Err(Error::Config(format!(
                "{m} negatives requested but only {} candidates besides the true tail",
                loose.len()
            )));
        }
        (loose, true)
    };
    let tails = sample(rng, eligible.len(), m)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    Ok(NegativeDraw { tails, relaxed })
}

/// Same-modality corruption of `triple`'s tail, filtered against every
/// positive of `(head, relation)` in `kg`.
pub fn sample_negatives(triple: TripleIx, kg: &KnowledgeGraph, m: usize, rng: &mut DetRng) -> Result<NegativeDraw> {
    let pool = kg.nodes_of_modality(kg.node_modality(triple.tail));
    sample_from_pool(pool, triple.tail, kg.tails_of(triple.head, triple.relation), m, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, Triple};
    use crate::rng::seeded;
    use alloc::vec;

    fn kg() -> KnowledgeGraph {
        let mut nodes = vec![Node::new("h", "a", "x")];
        for i in 0..5 {
            nodes.push(Node::new(format!("t{i}"), "b", "y"));
        }
        let triples = vec![Triple::new("h", "r", "t0"), Triple::new("h", "r", "t1")];
        KnowledgeGraph::new(nodes, triples, None, None).unwrap()
    }

    #[test]
    fn filter_excludes_known_positives() {
        let g = kg();
        let t = g.resolved()[0];
        let mut rng = seeded(1);
        for _ in 0..50 {
            let d = sample_negatives(t, &g, 3, &mut rng).unwrap();
            assert!(!d.relaxed);
            let mut s = d.tails.clone();
            s.sort();
            assert_eq!(s, vec![3, 4, 5]);
        }
    }

    #[test]
    fn relaxes_when_filter_is_too_strict() {
        let g = kg();
        let t = g.resolved()[0];
        let d = sample_negatives(t, &g, 4, &mut seeded(2)).unwrap();
        assert!(d.relaxed);
        assert!(!d.tails.contains(&t.tail));
        assert!(sample_negatives(t, &g, 5, &mut seeded(2)).is_err());
    }

    #[test]
    fn same_seed_same_draw() {
        let pool: Vec<usize> = (0..100).collect();
        let a = sample_from_pool(&pool, 7, None, 31, &mut seeded(9)).unwrap();
        let b = sample_from_pool(&pool, 7, None, 31, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }
}
