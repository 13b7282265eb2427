//! JSON run configuration.

use std::path::{Path, PathBuf};

use kgbridge_core::bridge::BridgeConfig;
use kgbridge_core::encoder::EncoderSpec;
use kgbridge_core::eval::EvalOptions;
use kgbridge_core::kge::{KgeFamily, KgeTrainConfig};
use kgbridge_core::split::SplitRatios;
use kgbridge_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

/// Relative paths are taken relative to the directory of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub nodes: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    /// Directory holding `train.tsv`, `valid.tsv`, `test.tsv` and `split.json`.
    pub split_dir: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    /// Precomputed vectors for external-import encoders.
    pub imports: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

fn default_family() -> KgeFamily {
    KgeFamily::TransE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub encoders: Vec<EncoderSpec>,
    #[serde(default)]
    pub bridge: BridgeConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_family")]
    pub kge_family: KgeFamily,
    #[serde(default)]
    pub kge: KgeTrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub split: SplitRatios,
    /// When set, overrides the seeds of the bridge, trainer and KGE sections.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Treat an encoder fingerprint mismatch on cache load as an error.
    #[serde(default)]
    pub strict_fingerprint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: PathsConfig::default(),
            encoders: Vec::new(),
            bridge: BridgeConfig::default(),
            train: TrainConfig::default(),
            kge_family: default_family(),
            kge: KgeTrainConfig::default(),
            eval: EvalOptions::default(),
            split: SplitRatios::default(),
            seed: None,
            strict_fingerprint: false,
        }
    }
}

impl RunConfig {
    pub fn parse(path: &Path, bytes: &[u8]) -> Result<Self> {
        // a malformed or unknown-key config is a configuration error, not bad data
        let mut c: RunConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        c.paths.resolve_against(base);
        if let Some(s) = c.seed {
            c.bridge.seed = s;
            c.train.seed = s;
            c.kge.seed = s;
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads, resolves and validates a config; also returns the raw bytes
    /// for hashing.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = read_file(path)?;
        Ok((Self::parse(path, &bytes)?, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        self.bridge.validate()?;
        self.train.validate()?;
        self.kge.validate(self.kge_family)?;
        self.split.validate()?;
        for s in &self.encoders {
            s.validate()?;
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Usage(
                "eval.ks must be a non-empty list of positive integers".into(),
            ));
        }
        Ok(())
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.nodes,
            &mut self.triples,
            &mut self.split_dir,
            &mut self.cache,
            &mut self.imports,
            &mut self.checkpoint,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// A configured path that the command needs; missing key is a usage error.
pub fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Usage(format!("config is missing `paths.{key}`")))
}

/// Fails unless every path exists, so commands stop before doing work.
pub fn check_exist(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let p = Path::new("/cfg/run.json");
        assert!(RunConfig::parse(p, br#"{"paths": {}, "bogus": 1}"#).is_err());
        assert!(RunConfig::parse(p, br#"{"train": {"epochz": 1}}"#).is_err());
        assert!(RunConfig::parse(p, br#"{"paths": {"graph": "x"}}"#).is_err());
    }

    #[test]
    fn relative_paths_and_seed_override() {
        let c = RunConfig::parse(
            Path::new("/cfg/run.json"),
            br#"{"paths": {"nodes": "n.tsv", "triples": "/abs/t.tsv"}, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(c.paths.nodes.as_deref(), Some(Path::new("/cfg/n.tsv")));
        assert_eq!(c.paths.triples.as_deref(), Some(Path::new("/abs/t.tsv")));
        assert_eq!((c.bridge.seed, c.train.seed, c.kge.seed), (9, 9, 9));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let p = Path::new("run.json");
        assert!(RunConfig::parse(p, br#"{"train": {"tau": 0}}"#).is_err());
        assert!(RunConfig::parse(p, br#"{"split": {"train": 0.5, "valid": 0.1, "test": 0.1}}"#).is_err());
        assert!(RunConfig::parse(p, br#"{"bridge": {"d": 30, "heads": 4}}"#).is_err());
    }
}
