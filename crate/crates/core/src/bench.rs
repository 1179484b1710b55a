//! Replicated simulation runs with model-error, selection and coverage summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Scaling;
use crate::engine::{run_panda, PandaConfig};
use crate::error::{PandaError, Result};
use crate::family::{FamilyKind, GlmFamily};
use crate::glm::fit_mle;
use crate::inference::infer;
use crate::noise::NoiseScheme;
use crate::rng::derive_seed;
use crate::sim::{generate, model_error, PredictorLaw, SimDesign};
use crate::tuning::{tune, Criterion, Strength, TuneGrid};

const BENCH_STREAM: u64 = 0xBE4C;

/// Unpenalized reference fit used for relative model error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    Ols,
    Mle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub design: SimDesign,
    pub scheme: NoiseScheme,
    pub config: PandaConfig,
    pub comparator: Comparator,
    /// Per-replicate grid search; the scheme above is then only a template.
    pub tuning: Option<TuneGrid>,
    pub inference: bool,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub estimate: Vec<f64>,
    pub model_error: f64,
    pub comparator_error: f64,
    pub relative_error: f64,
    pub correct_zeros: usize,
    pub incorrect_zeros: usize,
    pub covered: Vec<bool>,
    pub ci_width: Vec<f64>,
    pub lambda_ne: Option<f64>,
    pub n_e: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    pub replicates: usize,
    /// Median of PANDA/comparator model error, in percent.
    pub mrme: f64,
    pub correct_zeros: f64,
    pub incorrect_zeros: f64,
    /// Per-slope coverage in percent (empty without inference).
    pub coverage_by_coef: Vec<f64>,
    pub ci_width_by_coef: Vec<f64>,
    pub zero_coverage: Option<f64>,
    pub nonzero_coverage: Option<f64>,
    pub zero_ci_width: Option<f64>,
    pub nonzero_ci_width: Option<f64>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (c > 0).then(|| s / c as f64)
}

fn run_replicate(b: &Benchmark, index: usize) -> Result<ReplicateRecord> {
    let (data, beta) = generate(&b.design, index)?;
    let family = b.design.family;
    let config = PandaConfig { seed: derive_seed(b.design.seed, &[BENCH_STREAM, index as u64]), ..b.config.clone() };
    if b.comparator == Comparator::Ols && family.kind != FamilyKind::Gaussian {
        return Err(PandaError::InvalidParameter("the OLS comparator needs a Gaussian design".into()));
    }
    let reference = fit_mle(&family, &data, None, None)?;
    let comparator_error = model_error(reference.slopes.as_slice(), &beta, &b.design.predictor_law)?;

    let scheme = match &b.scheme {
        NoiseScheme::AdaptiveLasso { lambda, gamma, pilot } if pilot.is_empty() => {
            NoiseScheme::AdaptiveLasso { lambda: *lambda, gamma: *gamma, pilot: reference.slopes.iter().copied().collect() }
        }
        s => s.clone(),
    };
    let (fit, lambda_ne) = match &b.tuning {
        Some(grid) => {
            let grid = TuneGrid { scheme_template: scheme, ..grid.clone() };
            let res = tune(&family, &data, &grid, &config)?;
            (res.refit, Some(res.best.lambda_ne))
        }
        None => (run_panda(&family, &data, &scheme, &config)?, None),
    };
    let est: Vec<f64> = fit.theta_hat.slopes.iter().copied().collect();
    let me = model_error(&est, &beta, &b.design.predictor_law)?;
    let correct_zeros = (0..beta.len()).filter(|&j| beta[j] == 0.0 && fit.is_zero[j]).count();
    let incorrect_zeros = (0..beta.len()).filter(|&j| beta[j] != 0.0 && fit.is_zero[j]).count();
    let (covered, ci_width) = if b.inference {
        let inf = infer(&fit, &data, b.alpha)?;
        let cov = (0..beta.len()).map(|j| inf.ci_lower[j + 1] <= beta[j] && beta[j] <= inf.ci_upper[j + 1]).collect();
        let w = (0..beta.len()).map(|j| inf.ci_upper[j + 1] - inf.ci_lower[j + 1]).collect();
        (cov, w)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(ReplicateRecord {
        index,
        estimate: est,
        model_error: me,
        comparator_error,
        relative_error: me / comparator_error,
        correct_zeros,
        incorrect_zeros,
        covered,
        ci_width,
        lambda_ne,
        n_e: fit.config.n_e,
    })
}

/// Runs every replicate (in parallel) and aggregates. Failed replicates are
/// listed and left out of the summaries.
pub fn run_benchmark(b: &Benchmark) -> Result<BenchReport> {
    b.design.validate()?;
    b.config.validate()?;
    if let Some(g) = &b.tuning {
        g.validate()?;
    }
    let outcomes: Vec<(usize, Result<ReplicateRecord>)> =
        (0..b.design.replicates).into_par_iter().map(|i| (i, run_replicate(b, i))).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (index, o) in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("replicate {index} failed: {e}");
                failures.push(ReplicateFailure { index, error: e.to_string() });
            }
        }
    }
    if records.is_empty() {
        return Err(PandaError::InvalidInput(format!("all {} replicates failed", b.design.replicates)));
    }
    let p = b.design.p();
    let k = records.len() as f64;
    let mrme = 100.0 * median(records.iter().map(|r| r.relative_error).collect());
    let (coverage_by_coef, ci_width_by_coef) = if b.inference {
        let cov = (0..p).map(|j| 100.0 * records.iter().filter(|r| r.covered[j]).count() as f64 / k).collect();
        let w = (0..p).map(|j| records.iter().map(|r| r.ci_width[j]).sum::<f64>() / k).collect();
        (cov, w)
    } else {
        (Vec::new(), Vec::new())
    };
    let beta = &b.design.beta_true;
    let pick = |v: &Vec<f64>, zero: bool| mean((0..v.len()).filter(|&j| (beta[j] == 0.0) == zero).map(|j| v[j]));
    Ok(BenchReport {
        name: b.name.clone(),
        replicates: b.design.replicates,
        mrme,
        correct_zeros: records.iter().map(|r| r.correct_zeros as f64).sum::<f64>() / k,
        incorrect_zeros: records.iter().map(|r| r.incorrect_zeros as f64).sum::<f64>() / k,
        zero_coverage: pick(&coverage_by_coef, true),
        nonzero_coverage: pick(&coverage_by_coef, false),
        zero_ci_width: pick(&ci_width_by_coef, true),
        nonzero_ci_width: pick(&ci_width_by_coef, false),
        coverage_by_coef,
        ci_width_by_coef,
        records,
        failures,
    })
}

/// Regularizers available in the Table 4 and 5 presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PresetScheme {
    Ridge,
    Lasso,
    AdaptiveLasso,
    ElasticNet,
    Scad,
    L0,
}

impl std::str::FromStr for PresetScheme {
    type Err = PandaError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ridge" => Self::Ridge,
            "lasso" => Self::Lasso,
            "adaptive-lasso" | "alasso" => Self::AdaptiveLasso,
            "elastic-net" | "en" => Self::ElasticNet,
            "scad" => Self::Scad,
            "l0" => Self::L0,
            other => return Err(PandaError::InvalidParameter(format!("unknown preset scheme {other:?}"))),
        })
    }
}

/// `k` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k).map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp()).collect()
}

/// Coefficients of the 30-predictor coverage design: 9 zeros at positions
/// 1, 4, …, 25 and 21 nonzero values rising from 0.5 to 1.
pub fn coverage_beta() -> Vec<f64> {
    let mut beta = vec![0.0; 30];
    let mut k = 0;
    for (j, b) in beta.iter_mut().enumerate() {
        if !(j % 3 == 1 && j < 27) {
            *b = 0.5 + 0.025 * k as f64;
            k += 1;
        }
    }
    beta
}

/// Coverage study for one family at sample size `n`.
pub fn table3(family: GlmFamily, n: usize, replicates: usize, seed: u64) -> Benchmark {
    let law = match family.kind {
        FamilyKind::Gaussian | FamilyKind::NegativeBinomial => PredictorLaw::StdNormal,
        FamilyKind::Bernoulli => PredictorLaw::Uniform { lo: -3.0, hi: 3.0 },
        FamilyKind::Exponential => PredictorLaw::Uniform { lo: -1.0, hi: 2.0 },
        FamilyKind::Poisson => PredictorLaw::Uniform { lo: -0.3, hi: 0.5 },
    };
    let design = SimDesign { family, n, beta_true: coverage_beta(), intercept: 0.0, predictor_law: law, sigma: 1.0, replicates, seed };
    let base = PandaConfig { m: 600, r: 600, max_iter: 1200, tau: 0.0, tau0: 0.01, ..PandaConfig::default() };
    let (scheme, config, tuning) = if family.kind == FamilyKind::Bernoulli {
        let grid = TuneGrid {
            scheme_template: NoiseScheme::lasso(1.0),
            strength: Strength::LambdaNe(log_grid(1.5, 7.0, 5)),
            n_e_values: vec![n],
            criterion: Criterion::Cv { k: 5 },
        };
        (NoiseScheme::lasso(4.0 / n as f64), PandaConfig { n_e: n, m: 50, r: 50, max_iter: 150, ..base }, Some(grid))
    } else {
        (NoiseScheme::l0(n as f64 / 10.0), PandaConfig { n_e: 9, ..base }, None)
    };
    Benchmark {
        name: format!("table3-{family}-n{n}"),
        design,
        scheme,
        config,
        comparator: Comparator::Mle,
        tuning,
        inference: true,
        alpha: 0.05,
    }
}

const SPARSE_BETA: [f64; 8] = [3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0];

fn preset_scheme(kind: PresetScheme, p: usize, lambda_ne: &[f64]) -> (NoiseScheme, PandaConfig, TuneGrid) {
    let wide = PandaConfig { n_e: 200, m: 50, r: 50, max_iter: 150, tau0: 0.01, scaling: Scaling::UnitNorm, ..PandaConfig::default() };
    let grid = |template: NoiseScheme| TuneGrid {
        scheme_template: template,
        strength: Strength::LambdaNe(lambda_ne.to_vec()),
        n_e_values: vec![200],
        criterion: Criterion::Cv { k: 5 },
    };
    match kind {
        PresetScheme::Ridge => (NoiseScheme::ridge(0.01), wide.clone(), grid(NoiseScheme::ridge(0.01))),
        PresetScheme::Lasso => (NoiseScheme::lasso(0.01), wide.clone(), grid(NoiseScheme::lasso(0.01))),
        PresetScheme::AdaptiveLasso => {
            let s = NoiseScheme::AdaptiveLasso { lambda: 0.01, gamma: 0.1, pilot: Vec::new() };
            (s.clone(), wide.clone(), grid(s))
        }
        PresetScheme::ElasticNet => {
            let s = NoiseScheme::ElasticNet { lambda: 0.01, sigma2: 5.0 * 0.01 / 190.0 };
            (s.clone(), wide.clone(), grid(s))
        }
        PresetScheme::Scad => {
            let s = NoiseScheme::Scad { lambda: 0.01, a: 3.7 };
            (s.clone(), wide.clone(), grid(s))
        }
        PresetScheme::L0 => {
            let cfg = PandaConfig { m: 600, r: 600, max_iter: 1200, ..wide };
            let g = TuneGrid {
                scheme_template: NoiseScheme::l0(20.0),
                strength: Strength::FixedLambda(20.0),
                n_e_values: (1..p).collect(),
                criterion: Criterion::Cv { k: 5 },
            };
            (NoiseScheme::l0(20.0), cfg, g)
        }
    }
}

/// Sparse linear model with AR(1) predictors.
pub fn table4(kind: PresetScheme, n: usize, sigma: f64, replicates: usize, seed: u64) -> Benchmark {
    let design = SimDesign {
        family: GlmFamily::gaussian(),
        n,
        beta_true: SPARSE_BETA.to_vec(),
        intercept: 0.0,
        predictor_law: PredictorLaw::Ar1Normal { rho: 0.5 },
        sigma,
        replicates,
        seed,
    };
    let (scheme, config, grid) = preset_scheme(kind, 8, &log_grid(0.1, 100.0, 31));
    Benchmark {
        name: format!("table4-{kind:?}-n{n}-sigma{sigma}").to_lowercase(),
        design,
        scheme,
        config,
        comparator: Comparator::Ols,
        tuning: Some(grid),
        inference: false,
        alpha: 0.05,
    }
}

/// Sparse logistic model: six AR(1) predictors and two Bernoulli(½) columns.
pub fn table5(kind: PresetScheme, replicates: usize, seed: u64) -> Benchmark {
    let design = SimDesign {
        family: GlmFamily::bernoulli(),
        n: 200,
        beta_true: SPARSE_BETA.to_vec(),
        intercept: 0.0,
        predictor_law: PredictorLaw::Ar1WithBernoulli { rho: 0.5, binary: 2 },
        sigma: 1.0,
        replicates,
        seed,
    };
    let (scheme, config, grid) = preset_scheme(kind, 8, &log_grid(0.1, 100.0, 31));
    Benchmark {
        name: format!("table5-{kind:?}").to_lowercase(),
        design,
        scheme,
        config,
        comparator: Comparator::Mle,
        tuning: Some(grid),
        inference: false,
        alpha: 0.05,
    }
}
