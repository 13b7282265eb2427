use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // graph construction
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("triple references unknown node id `{0}`")]
    DanglingId(String),
    #[error("self-loop on node `{0}`")]
    SelfLoop(String),
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate vocabulary entry `{0}`")]
    DuplicateVocab(String),
    #[error("empty field `{field}` on node `{id}`")]
    EmptyField { id: String, field: &'static str },

    // encoders
    #[error("node `{node}` has modality `{found}`, encoder expects `{expected}`")]
    ModalityMismatch {
        node: String,
        expected: String,
        found: String,
    },
    #[error("cannot parse latent vector for `{node}`: {detail}")]
    LatentParse { node: String, detail: String },
    #[error("feature of `{node}` is shorter than the smallest n-gram ({min})")]
    FeatureTooShort { node: String, min: usize },
    #[error("no encoder spec for modality `{0}`")]
    MissingSpec(String),
    #[error("no cached embedding for node `{0}`")]
    MissingCacheEntry(String),

    // numerics
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(alloc::vec::Vec<usize>),
    #[error("vector norm {0:e} is too small to normalize")]
    DegenerateVector(f64),
    #[error("input to {op} is not unit-norm (norm {norm})")]
    NotNormalized { op: &'static str, norm: f64 },
    #[error("non-finite value from {op} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        op: &'static str,
    },

    // metrics and retrieval
    #[error("{0} requires a non-empty input")]
    Empty(&'static str),
    #[error("correlation is undefined for constant input")]
    ConstantInput,
    #[error("target `{0}` is not in the index")]
    TargetAbsent(String),
    #[error("duplicate id `{0}` in index")]
    DuplicateId(String),
    #[error("index mixes modalities `{0}` and `{1}`")]
    MixedModality(String, String),

    // prompts
    #[error("placeholder `{0}` is unbound")]
    UnboundPlaceholder(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Attaches training position to a numerical failure.
    pub fn at_step(self, epoch: usize, batch: usize) -> Error {
        match self {
            Error::NonFinite { op } => Error::NonFiniteLoss { epoch, batch, op },
            Error::DegenerateVector(_) => Error::NonFiniteLoss {
                epoch,
                batch,
                op: "normalize_rows",
            },
            other => other,
        }
    }

    /// True for errors raised by numerical breakdown (NaN/Inf, degenerate norms).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::DegenerateVector(_)
        )
    }
}
