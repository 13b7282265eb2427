//! Retrieval for prompt assembly: bridged top-k lists per role.

use std::str::FromStr;

use kgbridge_core::bridge::BridgeModel;
use kgbridge_core::encoder::EmbeddingCache;
use kgbridge_core::graph::KnowledgeGraph;
use kgbridge_core::index::{retrieve_tails, RankedResult};
use kgbridge_core::prompt::{PromptBundle, RetrievedLists, TemplateKind};
use kgbridge_core::Real;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ListRole {
    Proteins,
    Diseases,
    GoTerms,
}

/// Fills one list of the bundle with the top `k` tails of `tail_modality`
/// under `relation`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagRole {
    pub list: ListRole,
    pub tail_modality: String,
    pub relation: String,
    pub k: usize,
}

impl FromStr for RagRole {
    type Err = Error;

    /// `LIST:TAIL_MODALITY:RELATION:K`, e.g. `proteins:protein:target:5`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Usage(format!("role `{s}` is not LIST:TAIL_MODALITY:RELATION:K"));
        if parts.len() != 4 || parts[1].is_empty() || parts[2].is_empty() {
            return Err(bad());
        }
        let list = match parts[0] {
            "proteins" => ListRole::Proteins,
            "diseases" => ListRole::Diseases,
            "go-terms" => ListRole::GoTerms,
            other => {
                return Err(Error::Usage(format!(
                    "unknown list `{other}` (proteins, diseases, go-terms)"
                )))
            }
        };
        let k = parts[3].parse().ok().filter(|&k| k > 0).ok_or_else(bad)?;
        Ok(RagRole {
            list,
            tail_modality: parts[1].into(),
            relation: parts[2].into(),
            k,
        })
    }
}

/// Runs one bridged retrieval per role and returns the filled bundle with
/// the raw rankings. Lists hold node ids in rank order. The structure
/// field defaults to the query node's feature.
#[allow(clippy::too_many_arguments)]
pub fn retrieve_for_rag<T: Real>(
    kind: TemplateKind,
    node: &str,
    roles: &[RagRole],
    text: Option<String>,
    model: &BridgeModel<T>,
    cache: &EmbeddingCache,
    kg: &KnowledgeGraph,
) -> Result<(PromptBundle, Vec<RankedResult>)> {
    if roles.is_empty() {
        return Err(Error::Usage("at least one retrieval role is required".into()));
    }
    let query = kg
        .node_by_id(node)
        .ok_or_else(|| kgbridge_core::Error::UnknownNode(node.into()))?;
    let mut lists = RetrievedLists::default();
    let mut rankings = Vec::with_capacity(roles.len());
    for role in roles {
        let r = retrieve_tails(model, cache, kg, node, &role.tail_modality, &role.relation, role.k)?;
        let target = match role.list {
            ListRole::Proteins => &mut lists.proteins,
            ListRole::Diseases => &mut lists.diseases,
            ListRole::GoTerms => &mut lists.go_terms,
        };
        target.extend(r.hits.iter().map(|h| h.id.clone()));
        rankings.push(r);
    }
    let bundle = PromptBundle {
        kind,
        structure: Some(query.feature.clone()),
        lists,
        text,
    };
    Ok((bundle, rankings))
}
