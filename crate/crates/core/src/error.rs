use thiserror::Error;

use crate::data::CoefVector;

#[derive(Debug, Clone, Error)]
pub enum PandaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("fit did not converge after {iterations} Newton steps")]
    NonConvergence {
        iterations: usize,
        last: Box<CoefVector>,
    },

    #[error("fitted linear predictor diverged ({0}); likely complete separation")]
    Separation(String),

    #[error("under-augmented design: n + n_e = {rows} must exceed p = {p}")]
    UnderAugmented { rows: usize, p: usize },

    #[error("inference unavailable: {0}")]
    Inference(String),

    #[error("all {} tuning candidates failed", .0.len())]
    Tuning(Vec<String>),
}

pub type Result<T> = std::result::Result<T, PandaError>;
