use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mass matrix is numerically singular (condition estimate {condition:e})")]
    SingularMassMatrix { condition: f64 },

    #[error("chain did not settle within {steps} steps")]
    SettleTimeout { steps: usize },

    #[error("episode failed: {0}")]
    EpisodeFailure(Box<Error>),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient in block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("kinematic singularity (task-space condition number {condition:e})")]
    KinematicSingularity { condition: f64 },

    #[error("excitation score undefined for zero acceleration")]
    ZeroAcceleration,

    #[error("dataset collection stalled: {failures} failures for {requested} requested episodes")]
    CollectionStalled { failures: usize, requested: usize },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlParse(#[from] toml::de::Error),

    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
