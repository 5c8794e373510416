use mc_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dim {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("sample mode requires a noise vector")]
    MissingNoise,
    #[error("action contains NaN")]
    NanAction,
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("meta-loss does not depend on the meta-critic parameters; the inner step was built without a second-order path")]
    NoSecondOrderPath,
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("analysis: {0}")]
    Analysis(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
