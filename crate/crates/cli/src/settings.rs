//! Model flags, the TOML config file, and their resolution into core types.

use std::path::{Path, PathBuf};

use clap::Args;
use panda_core::{ConvergenceMode, GlmFamily, NoiseScheme, PandaConfig, Scaling};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every tunable knob. Each field is optional so flags can be layered over a
/// config file, which is layered over defaults.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelFlags {
    /// Response column name.
    #[arg(long)]
    pub response: Option<String>,
    /// gaussian, bernoulli, poisson, exponential or negbin:<r>.
    #[arg(long)]
    pub family: Option<String>,
    /// ridge, lasso, l0, bridge, elastic-net, adaptive-lasso, scad, group-lasso, fused-ridge, fused-lasso.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Noise variance scale λ.
    #[arg(long, conflicts_with = "lambda_ne")]
    pub lambda: Option<f64>,
    /// Penalty strength λ·n_e (sets λ = value / n_e).
    #[arg(long)]
    pub lambda_ne: Option<f64>,
    /// Bridge exponent, or the adaptive-lasso pilot exponent.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// SCAD shape parameter.
    #[arg(long)]
    pub a: Option<f64>,
    /// Elastic-net ridge variance σ².
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Group file: one group per line, comma-separated column names or 1-based indices.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub n_e: Option<usize>,
    /// Moving-average window.
    #[arg(short = 'm', long)]
    pub m: Option<usize>,
    /// Banked iterations.
    #[arg(short = 'r', long)]
    pub r: Option<usize>,
    /// Iteration budget T.
    #[arg(short = 'T', long)]
    pub max_iter: Option<usize>,
    /// Relative-change convergence threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Zero threshold.
    #[arg(long)]
    pub tau0: Option<f64>,
    /// Confidence level is 1 − alpha; also the z-test level.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// center or unit-norm.
    #[arg(long)]
    pub scaling: Option<String>,
    /// rel-change, z-test or both.
    #[arg(long)]
    pub convergence: Option<String>,
}

impl ModelFlags {
    /// Field-wise `self` over `other`.
    pub fn over(self, other: ModelFlags) -> ModelFlags {
        macro_rules! pick {
            ($($f:ident),*) => { ModelFlags { $($f: self.$f.or(other.$f)),* } };
        }
        let mut merged = pick!(
            response, family, scheme, lambda, lambda_ne, gamma, a, sigma2, groups, n_e, m, r, max_iter, tau, tau0, alpha, seed, folds,
            scaling, convergence
        );
        // A λ given at a higher layer hides a λn_e from a lower one, and vice versa.
        if self.lambda.is_some() {
            merged.lambda_ne = None;
        } else if self.lambda_ne.is_some() {
            merged.lambda = None;
        }
        merged
    }
}

pub fn load_config(path: &Path) -> Result<ModelFlags, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

/// Fully resolved settings; recorded verbatim in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Resolved {
    pub response: String,
    pub family: GlmFamily,
    pub scheme: NoiseScheme,
    /// The adaptive-lasso pilot is filled from the unpenalized fit at run time.
    pub pilot_from_data: bool,
    pub config: PandaConfig,
    pub alpha: f64,
    pub folds: usize,
}

pub const DEFAULT_LAMBDA: f64 = 0.01;

/// Resolves flags (already layered over the file) against the data columns.
/// Returns the settings and whether the seed was drawn rather than given.
pub fn resolve(flags: &ModelFlags, columns: &[String]) -> Result<(Resolved, bool), CliError> {
    let response = flags.response.clone().ok_or_else(|| CliError::usage("missing --response (name of the response column)"))?;
    let family: GlmFamily = flags.family.as_deref().unwrap_or("gaussian").parse().map_err(CliError::usage)?;
    let mut config = PandaConfig::default();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = flags.$f { config.$f = v; })* };
    }
    set!(n_e, m, r, max_iter, tau, tau0);
    if let Some(a) = flags.alpha {
        config.alpha = a;
    }
    config.scaling = match flags.scaling.as_deref() {
        None | Some("center") => Scaling::Center,
        Some("unit-norm") => Scaling::UnitNorm,
        Some(o) => return Err(CliError::usage(format!("unknown scaling '{o}' (expected center or unit-norm)"))),
    };
    config.convergence = match flags.convergence.as_deref() {
        None | Some("rel-change") => ConvergenceMode::RelChange,
        Some("z-test") => ConvergenceMode::ZTest,
        Some("both") => ConvergenceMode::Both,
        Some(o) => return Err(CliError::usage(format!("unknown convergence mode '{o}' (expected rel-change, z-test or both)"))),
    };
    let drawn = flags.seed.is_none();
    config.seed = flags.seed.unwrap_or_else(rand::random);

    let lambda = match (flags.lambda, flags.lambda_ne) {
        (Some(l), _) => l,
        (None, Some(lne)) => lne / config.n_e as f64,
        (None, None) => DEFAULT_LAMBDA,
    };
    let p = columns.iter().filter(|c| **c != response).count();
    let predictors: Vec<&String> = columns.iter().filter(|c| **c != response).collect();
    let mut pilot_from_data = false;
    let scheme = match flags.scheme.as_deref().unwrap_or("lasso") {
        "ridge" => NoiseScheme::ridge(lambda),
        "lasso" => NoiseScheme::lasso(lambda),
        "l0" => NoiseScheme::l0(lambda),
        "bridge" => NoiseScheme::bridge(lambda, flags.gamma.ok_or_else(|| CliError::usage("bridge needs --gamma"))?),
        "elastic-net" => NoiseScheme::ElasticNet { lambda, sigma2: flags.sigma2.ok_or_else(|| CliError::usage("elastic-net needs --sigma2"))? },
        "adaptive-lasso" => {
            pilot_from_data = true;
            NoiseScheme::AdaptiveLasso { lambda, gamma: flags.gamma.unwrap_or(1.0), pilot: vec![0.0; p] }
        }
        "scad" => NoiseScheme::Scad { lambda, a: flags.a.unwrap_or(3.7) },
        "group-lasso" => {
            let path = flags.groups.as_ref().ok_or_else(|| CliError::usage("group-lasso needs --groups <file>"))?;
            NoiseScheme::GroupLasso { lambda, groups: read_groups(path, &predictors)? }
        }
        "fused-ridge" => NoiseScheme::FusedRidge { lambda },
        "fused-lasso" => NoiseScheme::FusedLasso { lambda },
        other => return Err(CliError::usage(format!("unknown scheme '{other}'"))),
    };
    let folds = flags.folds.unwrap_or(5);
    Ok((Resolved { response, family, scheme, pilot_from_data, alpha: config.alpha, config, folds }, drawn))
}

/// Parses a group file into 0-based predictor indices.
pub fn read_groups(path: &Path, predictors: &[&String]) -> Result<Vec<Vec<usize>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read group file {}: {e}", path.display())))?;
    let mut groups = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut g = Vec::new();
        for tok in line.split(',').map(str::trim) {
            let idx = match predictors.iter().position(|c| c.as_str() == tok) {
                Some(i) => i,
                None => match tok.parse::<usize>() {
                    Ok(k) if (1..=predictors.len()).contains(&k) => k - 1,
                    _ => return Err(CliError::usage(format!("{}:{}: unknown predictor '{tok}'", path.display(), ln + 1))),
                },
            };
            g.push(idx);
        }
        groups.push(g);
    }
    Ok(groups)
}
