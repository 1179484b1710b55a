//! Penalized generalized linear models fitted by adaptive noise augmentation.
//!
//! Each iteration appends Gaussian pseudo-rows whose variance depends on the
//! current estimate, refits a plain MLE, and averages the results. The noise
//! design determines which penalty is realized in expectation.

pub mod bench;
pub mod data;
pub mod engine;
pub mod error;
pub mod family;
pub mod glm;
pub mod inference;
pub(crate) mod linalg;
pub mod noise;
pub mod rng;
pub mod sim;
pub mod tuning;

pub use bench::{coverage_beta, log_grid, run_benchmark, table3, table4, table5, BenchReport, Benchmark, Comparator, PresetScheme, ReplicateFailure, ReplicateRecord};
pub use data::{CoefVector, Dataset, PredictorTransform, Scaling};
pub use error::{PandaError, Result};
pub use family::{FamilyKind, GlmFamily};
pub use glm::{fit_mle, fit_mle_with, neg_log_likelihood, nll_gradient, FitOptions};
pub use inference::{fisher_augmented, gaussian_sandwich, gaussian_sigma2, infer, per_iteration_sigma, InferenceResult};
pub use linalg::min_eigenvalue;
pub use noise::{
    augment, sample_batch, sample_batch_with_floor, variance_spec, variance_spec_with_floor, NoiseBatch, NoiseScheme,
    NoiseVariance, DEFAULT_THETA_FLOOR,
};
pub use engine::{
    c1_statistic, check_convergence, fit_augmented, moving_average, run_panda, ConvergenceContext, ConvergenceDecision,
    ConvergenceMode, PandaConfig, PandaFit, TraceRow,
};
pub use tuning::{fold_assignment, tune, Candidate, Criterion, ScoreRow, Strength, TuneGrid, TuneResult};
