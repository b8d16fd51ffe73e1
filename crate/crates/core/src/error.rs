use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by estimators, detectors, inference, and the data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} is not positive-definite (smallest eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { what: String, min_eigenvalue: f64 },

    #[error("insufficient data: need at least {needed} days, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("insufficient pre-change data at candidate day k={k}: need at least {needed} pre-change days")]
    InsufficientPrechange { k: usize, needed: usize },

    #[error("feature '{feature}' has zero sample variance over the estimation days")]
    DegenerateFeature { feature: String },

    #[error("invalid search window: {0}")]
    Window(String),

    #[error("information matrix is singular for post-change length m={m}")]
    SingularInformation { m: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("divergence split needs at least 2 days per side (pre={t0}, post={t1})")]
    Split { t0: usize, t1: usize },

    #[error("incomplete data: {0}")]
    Missing(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("replicate {replicate} (seed {seed}) failed: {source}")]
    Replicate {
        replicate: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("detection failed at T={t}: {source}")]
    Detection {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("null cache: {0}")]
    Cache(String),

    #[error("rank correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("stream sets differ between logs: {0}")]
    StreamMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
