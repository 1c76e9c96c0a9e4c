use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("index {index} out of range for {steps} increments")]
    IndexOutOfRange { index: usize, steps: usize },

    #[error("{steps} increments exceed the dense covariance cap of {cap}")]
    CapExceeded { steps: usize, cap: usize },

    #[error("circulant embedding has eigenvalue {0:e} below tolerance and no fallback is possible")]
    EmbeddingFailed(f64),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("unsupported power {0}: expected an odd integer in 1..=11")]
    UnsupportedPower(u32),

    #[error("lattice sum of rho^{m} diverges at H = {hurst}")]
    Divergent { m: u32, hurst: f64 },

    #[error("beta radicand is negative ({0:e})")]
    NegativeRadicand(f64),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
