use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("channel mismatch: input has {input} channels, weight expects {expected}")]
    ChannelMismatch { input: usize, expected: usize },

    #[error("unsupported kernel size {0}: conv2d supports 1 and 3")]
    KernelSize(usize),

    #[error("2x2 max-pool requires even spatial dims, got {h}x{w}")]
    OddSpatial { h: usize, w: usize },

    #[error("tensor does not belong to this graph")]
    GraphMismatch,

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),

    #[error("weight store has no entry '{0}'")]
    MissingWeight(String),

    #[error("weight '{name}' has dims {dims:?}, expected {expected}")]
    WeightShape {
        name: String,
        dims: Vec<usize>,
        expected: String,
    },

    #[error("builder requires {expected} levels, got {got}")]
    LevelCount { expected: String, got: usize },

    #[error("builder does not support extra strided levels (extra_levels = {0})")]
    ExtraLevelsUnsupported(usize),

    #[error("config: {0}")]
    Config(String),

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error("scene spec unsatisfiable: no valid blob placement after {0} attempts")]
    SceneUnsatisfiable(usize),

    #[error("target values must lie in [0,1], found {0}")]
    TargetRange(f64),

    #[error("loss is not finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
