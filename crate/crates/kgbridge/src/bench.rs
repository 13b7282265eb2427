//! End-to-end run on a planted graph: generate, encode, split, train, rank.

use kgbridge_core::bridge::{BridgeConfig, Variant};
use kgbridge_core::encoder::{encode_all, EmbeddingCache, EncoderSpec, ImportTable};
use kgbridge_core::eval::{evaluate_link_prediction, BridgeScorer, EvalOptions, EvalReport};
use kgbridge_core::metrics::{expected_random_mrr, manhattan_similarity_matrix};
use kgbridge_core::negatives::known_positives;
use kgbridge_core::planted::{apply_map, generate_planted_kg, PlantedKg, PlantedKgSpec};
use kgbridge_core::split::{split_triples, SplitRatios, TripleSplit};
use kgbridge_core::tensor::Tensor;
use kgbridge_core::trainer::{train_bridge, EpochRecord, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPreset {
    pub name: String,
    pub graph: PlantedKgSpec,
    pub encoders: Vec<EncoderSpec>,
    pub ratios: SplitRatios,
    pub bridge: BridgeConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl PlantedPreset {
    /// Two modalities of 300 nodes, one relation, noise 0.05, d = 32 and the
    /// default trainer settings. One seed drives graph, split and training.
    pub fn small(seed: u64) -> Self {
        let graph = PlantedKgSpec::small(seed);
        let encoders = graph
            .modalities
            .iter()
            .map(|m| EncoderSpec::latent(m.label.clone(), graph.latent_dim))
            .collect();
        PlantedPreset {
            name: "small".into(),
            graph,
            encoders,
            ratios: SplitRatios::default(),
            bridge: BridgeConfig {
                d: 32,
                seed,
                ..BridgeConfig::default()
            },
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            eval: EvalOptions::default(),
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Result<Self> {
        match name {
            "small" => Ok(Self::small(seed)),
            _ => Err(Error::Usage(format!("unknown preset `{name}` (available: small)"))),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.train.variant = Some(variant);
        self
    }
}

/// Graph, cache and split of a preset, before any training.
#[derive(Debug, Clone)]
pub struct PlantedData {
    pub planted: PlantedKg,
    pub cache: EmbeddingCache,
    pub split: TripleSplit,
}

pub fn prepare_planted(preset: &PlantedPreset) -> Result<PlantedData> {
    let planted = generate_planted_kg(&preset.graph)?;
    let cache = encode_all(&planted.graph, &preset.encoders, &ImportTable::new())?;
    let split = split_triples(&planted.graph, preset.ratios, preset.graph.seed)?;
    Ok(PlantedData { planted, cache, split })
}

#[derive(Debug, Clone)]
pub struct PlantedBench {
    pub data: PlantedData,
    pub outcome: TrainOutcome,
    /// Filtered test ranking of the last checkpoint.
    pub report: EvalReport,
    /// Expected MRR of a uniformly random ranking over the tail candidates.
    pub random_mrr: f64,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub preset: String,
    pub seed: u64,
    pub variant: Variant,
    pub test_mrr: f64,
    pub random_mrr: f64,
    pub mrr_over_random: f64,
    pub hit_at_10: Option<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub candidates: usize,
    pub report: EvalReport,
}

impl PlantedBench {
    pub fn summary(&self, preset: &PlantedPreset) -> BenchSummary {
        BenchSummary {
            preset: preset.name.clone(),
            seed: preset.graph.seed,
            variant: self.outcome.last.model.config.variant,
            test_mrr: self.report.mrr(),
            random_mrr: self.random_mrr,
            mrr_over_random: self.report.mrr() / self.random_mrr,
            hit_at_10: self.report.hit(10),
            initial_loss: self.outcome.initial_loss,
            final_loss: self.outcome.final_loss,
            candidates: self.candidates,
            report: self.report.clone(),
        }
    }
}

pub fn run_planted_bench(preset: &PlantedPreset, observer: &mut dyn FnMut(&EpochRecord)) -> Result<PlantedBench> {
    let data = prepare_planted(preset)?;
    let kg = &data.planted.graph;
    let outcome = train_bridge(kg, &data.split, &data.cache, &preset.bridge, &preset.train, observer)?;
    let test = kg.resolve_all(&data.split.test)?;
    let seen = kg.resolve_all(&[data.split.train.as_slice(), data.split.valid.as_slice()].concat())?;
    let scorer = BridgeScorer {
        model: &outcome.last.model,
        cache: &data.cache,
    };
    let report = evaluate_link_prediction(&scorer, kg, &test, &known_positives(&seen), &preset.eval)?;
    let candidates = report.tasks.iter().map(|t| t.candidates).max().unwrap_or(0);
    Ok(PlantedBench {
        random_mrr: expected_random_mrr(candidates),
        candidates,
        data,
        outcome,
        report,
    })
}

/// Manhattan similarity between the planted images `A u` of `ids`, i.e.
/// where `relation` sends each head in latent space.
pub fn planted_image_similarity(planted: &PlantedKg, relation: &str, ids: &[&str]) -> Result<Tensor<f64>> {
    let map = planted
        .maps
        .get(relation)
        .ok_or_else(|| kgbridge_core::Error::UnknownRelation(relation.into()))?;
    let rows = ids
        .iter()
        .map(|id| {
            let u = planted
                .latents
                .get(*id)
                .ok_or_else(|| kgbridge_core::Error::UnknownNode(id.to_string()))?;
            Ok(apply_map(map, u.len(), u))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(manhattan_similarity_matrix(&Tensor::from_rows(&rows)?))
}
