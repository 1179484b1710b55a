//! Likelihood evaluation and maximum-likelihood fitting.

use nalgebra::{DMatrix, DVector};

use crate::data::{CoefVector, Dataset};
use crate::error::{PandaError, Result};
use crate::family::{FamilyKind, GlmFamily};
use crate::linalg::{gram_with_intercept, solve_spd};

/// Newton-step budget and stopping rule for [`fit_mle_with`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_steps: usize,
    /// Stop once `‖∇‖∞ ≤ grad_tol · (1 + |loss|)`.
    pub grad_tol: f64,
    /// Optional `½·ridge·‖θ‖²` on the slopes; zero gives the plain MLE.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_steps: 100, grad_tol: 1e-8, ridge: 0.0 }
    }
}

/// `−Σ [h(yᵢ) + ηᵢyᵢ − B(ηᵢ)]`, constants included.
pub fn neg_log_likelihood(family: &GlmFamily, data: &Dataset, coef: &CoefVector) -> Result<f64> {
    check_dims(data.p(), coef)?;
    nll_rows(family, &data.x, &data.y, None, coef)
}

pub(crate) fn nll_rows(
    family: &GlmFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: Option<&DVector<f64>>,
    coef: &CoefVector,
) -> Result<f64> {
    let eta = coef.eta(x);
    if eta.iter().any(|e| !e.is_finite()) {
        return Err(PandaError::Domain("non-finite linear predictor".into()));
    }
    Ok(weighted_loss(family, y, &eta, w))
}

fn weighted_loss(family: &GlmFamily, y: &DVector<f64>, eta: &DVector<f64>, w: Option<&DVector<f64>>) -> f64 {
    (0..y.len())
        .map(|i| w.map_or(1.0, |w| w[i]) * family.nll_obs(y[i], eta[i]))
        .sum()
}

/// Gradient of the negative log-likelihood in `(θ0, θ)`.
pub fn nll_gradient(family: &GlmFamily, data: &Dataset, coef: &CoefVector) -> Result<DVector<f64>> {
    check_dims(data.p(), coef)?;
    let eta = coef.eta(&data.x);
    Ok(gradient(family, &data.x, &data.y, None, &eta))
}

fn gradient(
    family: &GlmFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: Option<&DVector<f64>>,
    eta: &DVector<f64>,
) -> DVector<f64> {
    let g = DVector::from_fn(y.len(), |i, _| w.map_or(1.0, |w| w[i]) * family.grad_obs(y[i], eta[i]));
    let mut out = DVector::zeros(x.ncols() + 1);
    out[0] = g.sum();
    out.rows_mut(1, x.ncols()).copy_from(&x.tr_mul(&g));
    out
}

fn check_dims(p: usize, coef: &CoefVector) -> Result<()> {
    if coef.p() != p {
        return Err(PandaError::Dimension(format!("coefficient vector has {} slopes, data has {p}", coef.p())));
    }
    Ok(())
}

/// MLE with default options.
pub fn fit_mle(
    family: &GlmFamily,
    data: &Dataset,
    weights: Option<&DVector<f64>>,
    init: Option<&CoefVector>,
) -> Result<CoefVector> {
    fit_mle_with(family, data, weights, init, FitOptions::default())
}

pub fn fit_mle_with(
    family: &GlmFamily,
    data: &Dataset,
    weights: Option<&DVector<f64>>,
    init: Option<&CoefVector>,
    opts: FitOptions,
) -> Result<CoefVector> {
    if let Some(w) = weights {
        if w.len() != data.n() {
            return Err(PandaError::Dimension(format!("{} weights for {} rows", w.len(), data.n())));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PandaError::InvalidInput("weights must be finite and nonnegative".into()));
        }
    }
    if let Some(c) = init {
        check_dims(data.p(), c)?;
    }
    for &y in data.y.iter() {
        family.validate_response(y)?;
    }
    fit_rows(family, &data.x, &data.y, weights, init, opts)
}

/// Fitting on raw matrices; callers guarantee shapes and response support.
pub(crate) fn fit_rows(
    family: &GlmFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: Option<&DVector<f64>>,
    init: Option<&CoefVector>,
    opts: FitOptions,
) -> Result<CoefVector> {
    if family.kind == FamilyKind::Gaussian {
        return fit_gaussian(x, y, w, opts.ridge);
    }
    let ones;
    let w = match w {
        Some(w) => w,
        None => {
            ones = DVector::from_element(y.len(), 1.0);
            &ones
        }
    };
    if family.kind == FamilyKind::Bernoulli {
        let active: Vec<f64> = (0..y.len()).filter(|&i| w[i] > 0.0).map(|i| y[i]).collect();
        if active.iter().all(|&v| v == active[0]) {
            return Err(PandaError::Separation("all responses share one class".into()));
        }
    }
    let ybar = y.dot(w) / w.sum();
    let start = CoefVector::new(family.link(ybar), DVector::zeros(x.ncols()));
    let penalized = |c: &CoefVector| weighted_loss(family, y, &c.eta(x), Some(w)) + 0.5 * opts.ridge * c.slopes.norm_squared();
    let penalized_grad = |c: &CoefVector, eta: &DVector<f64>| {
        let mut g = gradient(family, x, y, Some(w), eta);
        for j in 0..c.p() {
            g[j + 1] += opts.ridge * c.slopes[j];
        }
        g
    };
    // Warm starts are kept only when they beat the intercept-only start.
    let mut theta = start.clone();
    let mut loss = penalized(&theta);
    if let Some(c) = init {
        let l = penalized(c);
        if l.is_finite() && l < loss {
            theta = c.clone();
            loss = l;
        }
    }

    for _ in 0..opts.max_steps {
        let eta = theta.eta(x);
        let g = penalized_grad(&theta, &eta);
        if g.amax() <= opts.grad_tol * (1.0 + loss.abs()) {
            return finish(family, theta, loss, &eta);
        }
        let h_obs = DVector::from_fn(y.len(), |i, _| w[i] * family.hess_obs(y[i], eta[i]));
        let step = newton_direction(family, x, y, w, &eta, &h_obs, &g, opts.ridge)?;
        let current = theta.stacked();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand = CoefVector::from_stacked(&(&current - &step * t));
            let cand_loss = penalized(&cand);
            if cand_loss.is_finite() && cand_loss <= loss + 1e-13 * loss.abs() {
                accepted = Some((cand, cand_loss));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, cand_loss)) => {
                theta = cand;
                loss = cand_loss;
            }
            None => {
                // No representable decrease left: accept if the gradient is at
                // the floor set by rounding, otherwise report failure.
                if g.amax() <= 1e3 * opts.grad_tol * (1.0 + loss.abs()) {
                    return finish(family, theta, loss, &eta);
                }
                return Err(PandaError::NonConvergence { iterations: opts.max_steps, last: Box::new(theta) });
            }
        }
    }
    let eta = theta.eta(x);
    let g = penalized_grad(&theta, &eta);
    if g.amax() <= opts.grad_tol * (1.0 + loss.abs()) {
        return finish(family, theta, loss, &eta);
    }
    Err(PandaError::NonConvergence { iterations: opts.max_steps, last: Box::new(theta) })
}

/// Newton direction from the observed Hessian, falling back to the expected
/// information and then to Marquardt damping `H + μ·diag(H)`.
fn newton_direction(
    family: &GlmFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    eta: &DVector<f64>,
    h_obs: &DVector<f64>,
    g: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>> {
    let with_ridge = |mut h: DMatrix<f64>| {
        for j in 1..h.nrows() {
            h[(j, j)] += ridge;
        }
        h
    };
    let h = with_ridge(gram_with_intercept(x, h_obs));
    if let Ok(s) = solve_spd(h, g, "Hessian") {
        return Ok(s);
    }
    let h_exp = DVector::from_fn(y.len(), |i, _| w[i] * family.info(eta[i]));
    let h = with_ridge(gram_with_intercept(x, &h_exp));
    if let Ok(s) = solve_spd(h.clone(), g, "Fisher information") {
        return Ok(s);
    }
    let mut last = None;
    for mu in [1e-8, 1e-5, 1e-2, 1.0] {
        let mut damped = h.clone();
        for j in 0..damped.nrows() {
            damped[(j, j)] *= 1.0 + mu;
        }
        match solve_spd(damped, g, "Fisher information") {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("damping was attempted"))
}

fn finish(family: &GlmFamily, theta: CoefVector, loss: f64, eta: &DVector<f64>) -> Result<CoefVector> {
    if family.kind == FamilyKind::Bernoulli {
        let max_eta = eta.amax();
        if max_eta > 30.0 || loss < 1e-6 {
            return Err(PandaError::Separation(format!("max |eta| = {max_eta:.1}, loss = {loss:.2e}")));
        }
    }
    Ok(theta)
}

fn fit_gaussian(x: &DMatrix<f64>, y: &DVector<f64>, w: Option<&DVector<f64>>, ridge: f64) -> Result<CoefVector> {
    let ones;
    let w = match w {
        Some(w) => w,
        None => {
            ones = DVector::from_element(y.len(), 1.0);
            &ones
        }
    };
    let mut gram = gram_with_intercept(x, w);
    for j in 1..gram.nrows() {
        gram[(j, j)] += ridge;
    }
    let wy = y.component_mul(w);
    let mut rhs = DVector::zeros(x.ncols() + 1);
    rhs[0] = wy.sum();
    rhs.rows_mut(1, x.ncols()).copy_from(&x.tr_mul(&wy));
    let sol = solve_spd(gram, &rhs, "normal equations")
        .map_err(|_| PandaError::Singular("Gaussian design is rank deficient".into()))?;
    Ok(CoefVector::from_stacked(&sol))
}
