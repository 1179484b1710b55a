//! The augmentation loop: sample noise at the current averaged estimate,
//! refit, average, monitor the averaged loss, then bank and threshold.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{CoefVector, Dataset, PredictorTransform, Scaling};
use crate::error::{PandaError, Result};
use crate::family::{FamilyKind, GlmFamily};
use crate::glm::{fit_rows, FitOptions};
use crate::linalg::solve_spd;
use crate::noise::{draw_rows, noise_response, variance_spec_with_floor, NoiseBatch, NoiseScheme, DEFAULT_THETA_FLOOR};
use crate::rng::{rng_from_seed, PandaRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceMode {
    RelChange,
    ZTest,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PandaConfig {
    /// Noise rows per iteration.
    pub n_e: usize,
    /// Moving-average window.
    pub m: usize,
    /// Banked iterations after convergence.
    pub r: usize,
    /// Iteration budget before banking.
    pub max_iter: usize,
    /// Relative-change threshold on the averaged loss.
    pub tau: f64,
    /// Zero threshold applied to the banked averages.
    pub tau0: f64,
    pub convergence: ConvergenceMode,
    /// Level of the z-test.
    pub alpha: f64,
    pub seed: u64,
    pub theta_floor: f64,
    /// Average over all available iterates while fewer than `m` exist;
    /// otherwise use the raw estimate for those early iterations.
    pub partial_window: bool,
    pub scaling: Scaling,
    /// Starting estimate on the original predictor scale.
    pub init: Option<CoefVector>,
    /// Keep the banked noise batches (needed by inference).
    pub keep_batches: bool,
}

impl Default for PandaConfig {
    fn default() -> Self {
        Self {
            n_e: 100,
            m: 20,
            r: 20,
            max_iter: 200,
            tau: 1e-3,
            tau0: 0.01,
            convergence: ConvergenceMode::RelChange,
            alpha: 0.05,
            seed: 0,
            theta_floor: DEFAULT_THETA_FLOOR,
            partial_window: true,
            scaling: Scaling::Center,
            init: None,
            keep_batches: true,
        }
    }
}

impl PandaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PandaError::InvalidParameter(m.to_string()));
        if self.n_e == 0 {
            return bad("n_e must be at least 1");
        }
        if self.m == 0 || self.r == 0 {
            return bad("m and r must be at least 1");
        }
        if self.max_iter < self.m {
            return bad("the iteration budget must be at least m");
        }
        if !(self.tau >= 0.0) {
            return bad("tau must be nonnegative");
        }
        if !(self.theta_floor > 0.0 && self.tau0 > self.theta_floor) {
            return bad("need tau0 > theta_floor > 0");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One row of the loss and coefficient trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub loss: f64,
    pub loss_bar: f64,
    pub z: Option<f64>,
    /// Averaged coefficients on the original scale, intercept first.
    pub theta_bar: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PandaFit {
    pub family: GlmFamily,
    pub scheme: NoiseScheme,
    pub config: PandaConfig,
    /// Final estimate with small slopes set to exactly zero.
    pub theta_hat: CoefVector,
    /// Mean of the banked averages before thresholding.
    pub theta_unthresholded: CoefVector,
    pub is_zero: Vec<bool>,
    /// Banked moving averages, original scale.
    pub banked: Vec<CoefVector>,
    /// Raw per-iteration estimates matching `banked`, original scale.
    pub theta_bank_raw: Vec<CoefVector>,
    /// Raw per-iteration estimates on the fitting scale.
    pub bank_internal: Vec<CoefVector>,
    /// Noise batches matching `bank_internal` (fitting scale).
    pub bank_batches: Vec<NoiseBatch>,
    pub loss_trace: Vec<TraceRow>,
    pub converged_at: Option<usize>,
    pub transform: PredictorTransform,
    pub warnings: Vec<String>,
}

impl PandaFit {
    pub fn n_nonzero(&self) -> usize {
        self.is_zero.iter().filter(|z| !**z).count()
    }
}

/// Coordinate-wise mean of the last `min(m, len)` entries.
///
/// # Panics
/// If `history` is empty.
pub fn moving_average(history: &[CoefVector], m: usize) -> CoefVector {
    assert!(!history.is_empty(), "moving average of an empty history");
    let k = m.max(1).min(history.len());
    let tail = &history[history.len() - k..];
    let mut acc = CoefVector::zeros(tail[0].p());
    for c in tail {
        acc.intercept += c.intercept;
        acc.slopes += &c.slopes;
    }
    acc.intercept /= k as f64;
    acc.slopes /= k as f64;
    acc
}

/// Scale of the loss fluctuation for one iteration: `(n_e/2)·√κ(θ0)·θᵀVθ`.
pub fn c1_statistic(family: &GlmFamily, scheme: &NoiseScheme, theta: &CoefVector, n_e: usize, floor: f64) -> Result<f64> {
    let var = variance_spec_with_floor(scheme, theta, n_e, floor)?;
    Ok(0.5 * n_e as f64 * family.kappa(theta.intercept).sqrt() * var.quad_form(&theta.slopes))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceContext {
    pub c1_prev: f64,
    pub c1_curr: f64,
    pub n_e: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceDecision {
    pub converged: bool,
    pub z: Option<f64>,
    pub rel_change: Option<f64>,
}

fn mode_flags(mode: ConvergenceMode) -> (bool, bool) {
    match mode {
        ConvergenceMode::RelChange => (true, false),
        ConvergenceMode::ZTest => (false, true),
        ConvergenceMode::Both => (true, true),
    }
}

/// Decision from the averaged-loss trace `loss_bar` (oldest first).
pub fn check_convergence(loss_bar: &[f64], ctx: ConvergenceContext, config: &PandaConfig) -> ConvergenceDecision {
    let len = loss_bar.len();
    let d = if len >= 2 { Some(loss_bar[len - 1] - loss_bar[len - 2]) } else { None };
    let rel_change = d.map(|d| d.abs() / loss_bar[len - 2].abs());
    let z = d.and_then(|d| {
        let s2 = (ctx.c1_prev.powi(2) + ctx.c1_curr.powi(2)) / ctx.n_e as f64;
        if d == 0.0 {
            Some(0.0)
        } else if s2 > 0.0 && s2.is_finite() {
            Some(d / s2.sqrt())
        } else {
            None
        }
    });
    let rel_ok = len > config.m && rel_change.is_some_and(|r| r < config.tau);
    let crit = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - config.alpha / 2.0);
    let (use_rel, use_z) = mode_flags(config.convergence);
    let z_ok = match z {
        Some(z) => z.abs() <= crit,
        // No usable scale (all slopes at zero): fall back to relative change.
        None => rel_ok,
    };
    let converged = match (use_rel, use_z) {
        (true, true) => rel_ok && z_ok,
        (true, false) => rel_ok,
        (false, true) => len >= 2 && z_ok,
        (false, false) => false,
    };
    ConvergenceDecision { converged, z, rel_change }
}

/// Data on the fitting scale plus quantities reused every iteration.
pub(crate) struct Prepared {
    pub family: GlmFamily,
    pub data: Dataset,
    pub transform: PredictorTransform,
    pub ybar: f64,
    /// `XᵀX` and `Xᵀ(y − ȳ)` on the fitting scale (Gaussian only).
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
}

impl Prepared {
    pub fn new(family: &GlmFamily, data: &Dataset, scaling: Scaling) -> Result<Self> {
        for &y in data.y.iter() {
            family.validate_response(y)?;
        }
        let transform = PredictorTransform::fit(&data.x, scaling)?;
        let x = transform.apply(&data.x);
        let ybar = data.mean_y();
        let xtx = x.tr_mul(&x);
        let yc = data.y.add_scalar(-ybar);
        let xty = x.tr_mul(&yc);
        let data = Dataset::with_names(x, data.y.clone(), data.column_names.clone())?;
        Ok(Self { family: family.canonical_scale(), data, transform, ybar, xtx, xty })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }
}

/// Refit on the observed rows plus one batch of noise rows (fitting scale).
///
/// For the Gaussian family the intercept is profiled out: it equals `ȳ` and
/// the slopes solve `(XᵀX + e_xᵀe_x) θ = Xᵀ(y − ȳ)` for centered `X`.
pub fn fit_augmented(family: &GlmFamily, data: &Dataset, batch: &NoiseBatch, init: Option<&CoefVector>) -> Result<CoefVector> {
    let n_e = batch.e_x.nrows();
    if data.n() + n_e <= data.p() {
        return Err(PandaError::UnderAugmented { rows: data.n() + n_e, p: data.p() });
    }
    if family.kind == FamilyKind::Gaussian {
        let ybar = data.mean_y();
        let xtx = data.x.tr_mul(&data.x);
        let xty = data.x.tr_mul(&data.y.add_scalar(-ybar));
        return gaussian_step(&xtx, &xty, ybar, &batch.e_x);
    }
    let aug = crate::noise::augment(data, batch)?;
    fit_rows(family, &aug.x, &aug.y, None, init, FitOptions::default())
}

fn gaussian_step(xtx: &DMatrix<f64>, xty: &DVector<f64>, ybar: f64, e_x: &DMatrix<f64>) -> Result<CoefVector> {
    let m = xtx + e_x.tr_mul(e_x);
    let slopes = solve_spd(m, xty, "augmented Gram matrix")?;
    Ok(CoefVector::new(ybar, slopes))
}

/// Negative log-likelihood of the augmented data at `theta` (fitting scale).
pub(crate) fn augmented_loss(prep: &Prepared, batch: &NoiseBatch, theta: &CoefVector) -> f64 {
    let f = &prep.family;
    let eta_obs = theta.eta(&prep.data.x);
    let eta_noise = theta.eta(&batch.e_x);
    let obs: f64 = prep.data.y.iter().zip(eta_obs.iter()).map(|(&y, &e)| f.nll_obs(y, e)).sum();
    let noise: f64 = batch.e_y.iter().zip(eta_noise.iter()).map(|(&y, &e)| f.nll_obs(y, e)).sum();
    obs + noise
}

fn initial_estimate(prep: &Prepared, config: &PandaConfig) -> Result<CoefVector> {
    if let Some(init) = &config.init {
        if init.p() != prep.p() {
            return Err(PandaError::Dimension("initial estimate has the wrong length".into()));
        }
        // Invert θ_orig = L θ_int.
        let l = prep.transform.linear_map();
        let v = l.lu().solve(&init.stacked()).ok_or_else(|| PandaError::Singular("predictor transform".into()))?;
        return Ok(CoefVector::from_stacked(&v));
    }
    let x = &prep.data.x;
    let y = &prep.data.y;
    if prep.n() > prep.p() {
        if let Ok(c) = fit_rows(&prep.family, x, y, None, None, FitOptions::default()) {
            return Ok(c);
        }
    }
    fit_rows(&prep.family, x, y, None, None, FitOptions { ridge: 1.0, ..FitOptions::default() })
}

struct Step {
    batch: NoiseBatch,
    theta_hat: CoefVector,
}

fn one_iteration(
    prep: &Prepared,
    scheme: &NoiseScheme,
    config: &PandaConfig,
    theta_bar: &CoefVector,
    warm: &CoefVector,
    rng: &mut PandaRng,
) -> Result<Step> {
    let var = variance_spec_with_floor(scheme, theta_bar, config.n_e, config.theta_floor)?;
    let mut last_err = None;
    for _ in 0..2 {
        let e_x = draw_rows(&var, config.n_e, rng);
        let e_y = noise_response(&prep.family, &prep.data.y, config.n_e, rng);
        let batch = NoiseBatch { e_x, e_y, scheme_snapshot: scheme.clone(), theta_snapshot: theta_bar.clone() };
        let fit = if prep.family.kind == FamilyKind::Gaussian {
            gaussian_step(&prep.xtx, &prep.xty, prep.ybar, &batch.e_x)
        } else {
            let aug = crate::noise::augment(&prep.data, &batch)?;
            fit_rows(&prep.family, &aug.x, &aug.y, None, Some(warm), FitOptions::default())
        };
        match fit {
            Ok(theta_hat) => return Ok(Step { batch, theta_hat }),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("two attempts were made"))
}

/// Runs the full procedure and returns banked, thresholded estimates.
pub fn run_panda(family: &GlmFamily, data: &Dataset, scheme: &NoiseScheme, config: &PandaConfig) -> Result<PandaFit> {
    config.validate()?;
    scheme.validate(data.p())?;
    if data.n() + config.n_e <= data.p() {
        return Err(PandaError::UnderAugmented { rows: data.n() + config.n_e, p: data.p() });
    }
    let prep = Prepared::new(family, data, config.scaling)?;
    let user_scheme = scheme.clone();
    let internal_scheme = scheme_on_fitting_scale(scheme, &prep.transform);
    let scheme = &internal_scheme;
    let mut rng = rng_from_seed(config.seed);
    let mut theta_bar = initial_estimate(&prep, config)?;
    let mut warm = theta_bar.clone();

    let m = config.m;
    let mut hist: VecDeque<CoefVector> = VecDeque::with_capacity(m + 1);
    let mut losses: VecDeque<f64> = VecDeque::with_capacity(m + 1);
    let mut loss_bar: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let mut c1_prev = f64::NAN;
    let mut converged_at = None;

    let mut banked = Vec::with_capacity(config.r);
    let mut bank_internal = Vec::with_capacity(config.r);
    let mut bank_batches = Vec::new();

    let total_budget = config.max_iter + m + config.r;
    let mut post = 0usize;
    let mut t = 0usize;
    while t < total_budget {
        t += 1;
        let step = one_iteration(&prep, scheme, config, &theta_bar, &warm, &mut rng)?;
        warm = step.theta_hat.clone();

        hist.push_back(step.theta_hat.clone());
        if hist.len() > m {
            hist.pop_front();
        }
        let full = hist.len() == m;
        theta_bar = if full || config.partial_window {
            moving_average(hist.make_contiguous(), m)
        } else {
            step.theta_hat.clone()
        };

        let loss = augmented_loss(&prep, &step.batch, &theta_bar);
        losses.push_back(loss);
        if losses.len() > m {
            losses.pop_front();
        }
        let lbar = if full || config.partial_window { losses.iter().sum::<f64>() / losses.len() as f64 } else { loss };
        loss_bar.push(lbar);

        let c1 = c1_statistic(&prep.family, scheme, &step.theta_hat, config.n_e, config.theta_floor)?;
        let ctx = ConvergenceContext { c1_prev: if c1_prev.is_nan() { c1 } else { c1_prev }, c1_curr: c1, n_e: config.n_e };
        let decision = check_convergence(&loss_bar, ctx, config);
        c1_prev = c1;

        trace.push(TraceRow {
            t,
            loss,
            loss_bar: lbar,
            z: decision.z,
            theta_bar: prep.transform.to_original(&theta_bar).stacked().iter().copied().collect(),
        });

        if converged_at.is_none() && post == 0 {
            if decision.converged {
                converged_at = Some(t);
            } else if t < config.max_iter {
                continue;
            }
            post = 1;
            continue;
        }
        // Post-convergence: m refresh iterations, then r banked ones.
        post += 1;
        if post > m + 1 {
            banked.push(prep.transform.to_original(&theta_bar));
            bank_internal.push(step.theta_hat.clone());
            if config.keep_batches {
                bank_batches.push(step.batch);
            }
        }
        if banked.len() == config.r {
            break;
        }
    }

    let mut warnings = Vec::new();
    if converged_at.is_none() {
        let msg = format!("no convergence within {} iterations; estimates banked anyway", config.max_iter);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let r = banked.len() as f64;
    let p = prep.p();
    let mut mean = CoefVector::zeros(p);
    for b in &banked {
        mean.intercept += b.intercept / r;
        mean.slopes += &b.slopes / r;
    }
    let is_zero: Vec<bool> = (0..p)
        .map(|j| banked.iter().map(|b| b.slopes[j].abs()).fold(0.0, f64::max) < config.tau0)
        .collect();
    let theta_hat = threshold(&prep, &banked, &is_zero);
    let theta_bank_raw = bank_internal.iter().map(|c| prep.transform.to_original(c)).collect();

    Ok(PandaFit {
        family: *family,
        scheme: user_scheme,
        config: config.clone(),
        theta_hat,
        theta_unthresholded: mean,
        is_zero,
        banked,
        theta_bank_raw,
        bank_internal,
        bank_batches,
        loss_trace: trace,
        converged_at,
        transform: prep.transform.clone(),
        warnings,
    })
}

/// Mean of the banked estimates with zeroed slopes removed; the intercept is
/// recomputed on the fitting scale so the fitted mean at `x̄` is unchanged.
fn threshold(prep: &Prepared, banked: &[CoefVector], is_zero: &[bool]) -> CoefVector {
    let p = prep.p();
    let r = banked.len() as f64;
    let mut internal = CoefVector::zeros(p);
    for b in banked {
        let bi = to_internal(&prep.transform, b);
        internal.intercept += bi.intercept / r;
        internal.slopes += &bi.slopes / r;
    }
    for j in 0..p {
        if is_zero[j] {
            internal.slopes[j] = 0.0;
        }
    }
    let mut out = prep.transform.to_original(&internal);
    for j in 0..p {
        if is_zero[j] {
            out.slopes[j] = 0.0;
        }
    }
    out
}

/// Adaptive-lasso pilots are given on the original scale; the loop needs them
/// on the fitting scale.
fn scheme_on_fitting_scale(scheme: &NoiseScheme, t: &PredictorTransform) -> NoiseScheme {
    match scheme {
        NoiseScheme::AdaptiveLasso { lambda, gamma, pilot } => NoiseScheme::AdaptiveLasso {
            lambda: *lambda,
            gamma: *gamma,
            pilot: pilot.iter().zip(&t.scales).map(|(b, s)| b * s).collect(),
        },
        other => other.clone(),
    }
}

pub(crate) fn to_internal(t: &PredictorTransform, c: &CoefVector) -> CoefVector {
    let slopes = DVector::from_fn(c.p(), |j, _| c.slopes[j] * t.scales[j]);
    let shift: f64 = c.slopes.iter().zip(&t.means).map(|(b, m)| b * m).sum();
    CoefVector::new(c.intercept + shift, slopes)
}
