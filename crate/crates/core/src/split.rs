//! Stratified train/valid/test partition of graph triples.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, StratumKey, Triple};
use crate::rng;

/// Smallest stratum that is divided; smaller strata go wholly to train.
pub const MIN_SPLIT_STRATUM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, valid, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.valid, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumSplit {
    pub head_modality: String,
    pub relation: String,
    pub tail_modality: String,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitWarning {
    pub head_modality: String,
    pub relation: String,
    pub tail_modality: String,
    pub size: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleSplit {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub strata: Vec<StratumSplit>,
    pub warnings: Vec<SplitWarning>,
}

impl TripleSplit {
    /// Split with everything in train; used when no held-out data is wanted.
    pub fn all_train(kg: &KnowledgeGraph) -> Self {
        TripleSplit {
            train: kg.triples().to_vec(),
            valid: Vec::new(),
            test: Vec::new(),
            ratios: SplitRatios {
                train: 1.0,
                valid: 0.0,
                test: 0.0,
            },
            seed: 0,
            strata: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Partitions the graph's triples per (relation, head modality, tail modality)
/// stratum. Each stratum is shuffled with the seeded generator and cut into
/// `round(n*valid)` validation, `round(n*test)` test, and the rest train.
pub fn split_triples(kg: &KnowledgeGraph, ratios: SplitRatios, seed: u64) -> Result<TripleSplit> {
    ratios.validate()?;
    let mut groups: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, &t) in kg.resolved().iter().enumerate() {
        groups.entry(kg.stratum(t)).or_default().push(i);
    }

    let mut rng = rng::seeded(seed);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let mut strata = Vec::new();
    let mut warnings = Vec::new();
    for (key, mut members) in groups {
        let (head_modality, relation, tail_modality) = kg.stratum_label(key);
        let n = members.len();
        let (n_valid, n_test) = if n < MIN_SPLIT_STRATUM {
            warnings.push(SplitWarning {
                head_modality: head_modality.clone(),
                relation: relation.clone(),
                tail_modality: tail_modality.clone(),
                size: n,
                message: format!("stratum has {n} triple(s); placed wholly in train"),
            });
            (0, 0)
        } else {
            members.shuffle(&mut rng);
            let nv = round_half_up(n as f64 * ratios.valid);
            let nt = round_half_up(n as f64 * ratios.test).min(n - nv);
            (nv, nt)
        };
        let n_train = n - n_valid - n_test;
        valid.extend_from_slice(&members[..n_valid]);
        test.extend_from_slice(&members[n_valid..n_valid + n_test]);
        train.extend_from_slice(&members[n_valid + n_test..]);
        strata.push(StratumSplit {
            head_modality,
            relation,
            tail_modality,
            train: n_train,
            valid: n_valid,
            test: n_test,
        });
    }

    let collect = |mut ix: Vec<usize>| -> Vec<Triple> {
        ix.sort_unstable();
        ix.into_iter().map(|i| kg.triples()[i].clone()).collect()
    };
    Ok(TripleSplit {
        train: collect(train),
        valid: collect(valid),
        test: collect(test),
        ratios,
        seed,
        strata,
        warnings,
    })
}
