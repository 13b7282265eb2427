//! Multimodal knowledge graph: typed nodes joined by directed, relation-labeled triples.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub modality: String,
    /// Raw feature text: a sequence, a SMILES string, or name plus definition.
    pub feature: String,
}

impl Node {
    pub fn new(id: impl Into<String>, modality: impl Into<String>, feature: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            modality: modality.into(),
            feature: feature.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// A triple resolved to dense indices of its owning graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripleIx {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Stratum label of a triple: (relation, head modality, tail modality) indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumKey {
    pub relation: usize,
    pub head_modality: usize,
    pub tail_modality: usize,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    node_modality: Vec<usize>,
    index: BTreeMap<String, usize>,
    triples: Vec<Triple>,
    resolved: Vec<TripleIx>,
    modality_vocab: Vec<String>,
    relation_vocab: Vec<String>,
    by_modality: Vec<Vec<usize>>,
    adjacency: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

fn check_unique(vocab: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for v in vocab {
        if !seen.insert(v.as_str()) {
            return Err(Error::DuplicateVocab(v.clone()));
        }
    }
    Ok(())
}

impl KnowledgeGraph {
    /// Validates and indexes a graph. Vocabularies default to first-appearance
    /// order; a declared vocabulary fixes the order and rejects unknown labels.
    pub fn new(
        nodes: Vec<Node>,
        triples: Vec<Triple>,
        declared_modalities: Option<Vec<String>>,
        declared_relations: Option<Vec<String>>,
    ) -> Result<Self> {
        let modality_declared = declared_modalities.is_some();
        let relation_declared = declared_relations.is_some();
        let mut modality_vocab = declared_modalities.unwrap_or_default();
        let mut relation_vocab = declared_relations.unwrap_or_default();
        check_unique(&modality_vocab)?;
        check_unique(&relation_vocab)?;

        let mut index = BTreeMap::new();
        let mut node_modality = Vec::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.id.is_empty() {
                return Err(Error::EmptyField {
                    id: node.id.clone(),
                    field: "id",
                });
            }
            if node.feature.is_empty() {
                return Err(Error::EmptyField {
                    id: node.id.clone(),
                    field: "feature",
                });
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::DuplicateNode(node.id.clone()));
            }
            let m = match modality_vocab.iter().position(|m| *m == node.modality) {
                Some(m) => m,
                None if modality_declared => return Err(Error::UnknownModality(node.modality.clone())),
                None => {
                    modality_vocab.push(node.modality.clone());
                    modality_vocab.len() - 1
                }
            };
            node_modality.push(m);
        }

        let mut resolved = Vec::with_capacity(triples.len());
        let mut adjacency: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
        for t in &triples {
            let head = *index.get(&t.head).ok_or_else(|| Error::DanglingId(t.head.clone()))?;
            let tail = *index.get(&t.tail).ok_or_else(|| Error::DanglingId(t.tail.clone()))?;
            if head == tail {
                return Err(Error::SelfLoop(t.head.clone()));
            }
            let relation = match relation_vocab.iter().position(|r| *r == t.relation) {
                Some(r) => r,
                None if relation_declared => return Err(Error::UnknownRelation(t.relation.clone())),
                None => {
                    relation_vocab.push(t.relation.clone());
                    relation_vocab.len() - 1
                }
            };
            resolved.push(TripleIx { head, relation, tail });
            adjacency.entry((head, relation)).or_default().insert(tail);
        }

        let mut by_modality = alloc::vec![Vec::new(); modality_vocab.len()];
        // BTreeMap iteration is id-lexicographic
        for &i in index.values() {
            by_modality[node_modality[i]].push(i);
        }

        Ok(KnowledgeGraph {
            nodes,
            node_modality,
            index,
            triples,
            resolved,
            modality_vocab,
            relation_vocab,
            by_modality,
            adjacency,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new(), None, None).expect("empty graph is valid")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, ix: usize) -> &Node {
        &self.nodes[ix]
    }

    pub fn node_by_id(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn node_modality(&self, ix: usize) -> usize {
        self.node_modality[ix]
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn resolved(&self) -> &[TripleIx] {
        &self.resolved
    }

    pub fn modality_vocab(&self) -> &[String] {
        &self.modality_vocab
    }

    pub fn relation_vocab(&self) -> &[String] {
        &self.relation_vocab
    }

    pub fn modality_index(&self, label: &str) -> Result<usize> {
        self.modality_vocab
            .iter()
            .position(|m| m == label)
            .ok_or_else(|| Error::UnknownModality(label.to_string()))
    }

    pub fn relation_index(&self, label: &str) -> Result<usize> {
        self.relation_vocab
            .iter()
            .position(|r| r == label)
            .ok_or_else(|| Error::UnknownRelation(label.to_string()))
    }

    /// Node indices of one modality, sorted by node id.
    pub fn nodes_of_modality(&self, modality: usize) -> &[usize] {
        &self.by_modality[modality]
    }

    /// Known tails of `(head, relation)` across the whole graph.
    pub fn tails_of(&self, head: usize, relation: usize) -> Option<&BTreeSet<usize>> {
        self.adjacency.get(&(head, relation))
    }

    pub fn adjacency(&self) -> &BTreeMap<(usize, usize), BTreeSet<usize>> {
        &self.adjacency
    }

    pub fn resolve(&self, t: &Triple) -> Result<TripleIx> {
        Ok(TripleIx {
            head: self.node_index(&t.head)?,
            relation: self.relation_index(&t.relation)?,
            tail: self.node_index(&t.tail)?,
        })
    }

    pub fn resolve_all(&self, triples: &[Triple]) -> Result<Vec<TripleIx>> {
        triples.iter().map(|t| self.resolve(t)).collect()
    }

    pub fn stratum(&self, t: TripleIx) -> StratumKey {
        StratumKey {
            relation: t.relation,
            head_modality: self.node_modality[t.head],
            tail_modality: self.node_modality[t.tail],
        }
    }

    pub fn stratum_label(&self, key: StratumKey) -> (String, String, String) {
        (
            self.modality_vocab[key.head_modality].clone(),
            self.relation_vocab[key.relation].clone(),
            self.modality_vocab[key.tail_modality].clone(),
        )
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityCount {
    pub modality: String,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCount {
    pub head_modality: String,
    pub relation: String,
    pub tail_modality: String,
    pub triples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub total_nodes: usize,
    pub total_triples: usize,
    pub nodes: Vec<ModalityCount>,
    pub strata: Vec<StratumCount>,
}

/// Node counts per modality and triple counts per (head modality, relation,
/// tail modality), ordered by vocabulary position. Only non-empty strata are listed.
pub fn graph_stats(kg: &KnowledgeGraph) -> GraphStats {
    let mut node_counts = alloc::vec![0usize; kg.modality_vocab.len()];
    for &m in &kg.node_modality {
        node_counts[m] += 1;
    }
    let mut strata: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for &t in &kg.resolved {
        let k = kg.stratum(t);
        *strata
            .entry((k.head_modality, k.relation, k.tail_modality))
            .or_default() += 1;
    }
    GraphStats {
        total_nodes: kg.nodes.len(),
        total_triples: kg.triples.len(),
        nodes: kg
            .modality_vocab
            .iter()
            .zip(node_counts)
            .map(|(m, n)| ModalityCount {
                modality: m.clone(),
                nodes: n,
            })
            .collect(),
        strata: strata
            .into_iter()
            .map(|((h, r, t), n)| StratumCount {
                head_modality: kg.modality_vocab[h].clone(),
                relation: kg.relation_vocab[r].clone(),
                tail_modality: kg.modality_vocab[t].clone(),
                triples: n,
            })
            .collect(),
    }
}
