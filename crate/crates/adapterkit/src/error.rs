use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid input shape {shape:?}: {reason}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward on an empty graph")]
    EmptyGraph,

    #[error("function is not deterministic: two forward passes disagree")]
    NonDeterministic,

    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),

    #[error("duplicate parameter {0:?}")]
    DuplicateParameter(String),

    #[error("non-finite gradient in parameter {0:?}")]
    NonFiniteGradient(String),

    #[error("training loss became non-finite at step {step}: {loss}")]
    NanLoss { step: usize, loss: f64 },

    #[error("empty demonstration set")]
    EmptyDemoSet,

    #[error("adapter feature size mismatch: adapter expects {expected}, got {got}")]
    FeatureSizeMismatch { expected: usize, got: usize },

    #[error("duplicate adapter site {0}")]
    DuplicateSite(String),

    #[error("bottleneck width {width} must be strictly smaller than feature size {features}")]
    InvalidBottleneck { width: usize, features: usize },

    #[error("invalid adapter site {site} for this model: {reason}")]
    InvalidSite { site: String, reason: String },

    #[error("transformer depth {0} too shallow for the middle placement rule (need >= 6)")]
    DepthTooShallow(usize),

    #[error("bundle: {0}")]
    Bundle(String),

    #[error("bundle hash mismatch for {path}: expected {expected}, got {got}")]
    HashMismatch {
        path: String,
        expected: String,
        got: String,
    },

    #[error("parameter name sets differ: missing {missing:?}, extra {extra:?}")]
    NameSetMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("empty selection: no parameters match filter {0:?}")]
    EmptySelection(String),

    #[error("config: {0}")]
    Config(String),

    #[error("evaluation needs at least one rollout")]
    NoRollouts,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
