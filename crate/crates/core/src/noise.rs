//! Noise-generating distributions and data augmentation.
//!
//! Every scheme draws mean-zero Gaussian rows whose covariance depends on the
//! current slopes. In expectation, refitting on the augmented rows adds the
//! corresponding penalty to the observed-data loss.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{CoefVector, Dataset};
use crate::error::{PandaError, Result};
use crate::family::{FamilyKind, GlmFamily};

/// Floor applied to `|θj|` (and pairwise differences) inside variance formulas.
pub const DEFAULT_THETA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseScheme {
    /// `V = λ|θ|^{−γ}`: γ = 2 is l0, γ = 1 lasso, γ = 0 ridge.
    Bridge { lambda: f64, gamma: f64 },
    ElasticNet { lambda: f64, sigma2: f64 },
    AdaptiveLasso { lambda: f64, gamma: f64, pilot: Vec<f64> },
    Scad { lambda: f64, a: f64 },
    /// `groups` lists 0-based coordinate indices; together they partition `0..p`.
    GroupLasso { lambda: f64, groups: Vec<Vec<usize>> },
    FusedRidge { lambda: f64 },
    FusedLasso { lambda: f64 },
}

impl NoiseScheme {
    pub fn bridge(lambda: f64, gamma: f64) -> Self {
        Self::Bridge { lambda, gamma }
    }
    pub fn l0(lambda: f64) -> Self {
        Self::bridge(lambda, 2.0)
    }
    pub fn lasso(lambda: f64) -> Self {
        Self::bridge(lambda, 1.0)
    }
    pub fn ridge(lambda: f64) -> Self {
        Self::bridge(lambda, 0.0)
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            Self::Bridge { lambda, .. }
            | Self::ElasticNet { lambda, .. }
            | Self::AdaptiveLasso { lambda, .. }
            | Self::Scad { lambda, .. }
            | Self::GroupLasso { lambda, .. }
            | Self::FusedRidge { lambda }
            | Self::FusedLasso { lambda } => lambda,
        }
    }

    /// Same scheme at a new `λ`. The elastic-net `σ²` is rescaled with `λ` so
    /// the ridge/lasso mix stays fixed along a path.
    pub fn with_lambda(&self, new: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            Self::ElasticNet { lambda, sigma2 } => {
                *sigma2 *= new / *lambda;
                *lambda = new;
            }
            Self::Bridge { lambda, .. }
            | Self::AdaptiveLasso { lambda, .. }
            | Self::Scad { lambda, .. }
            | Self::GroupLasso { lambda, .. }
            | Self::FusedRidge { lambda }
            | Self::FusedLasso { lambda } => *lambda = new,
        }
        s
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bridge { gamma, .. } if *gamma == 2.0 => "l0",
            Self::Bridge { gamma, .. } if *gamma == 1.0 => "lasso",
            Self::Bridge { gamma, .. } if *gamma == 0.0 => "ridge",
            Self::Bridge { .. } => "bridge",
            Self::ElasticNet { .. } => "elastic-net",
            Self::AdaptiveLasso { .. } => "adaptive-lasso",
            Self::Scad { .. } => "scad",
            Self::GroupLasso { .. } => "group-lasso",
            Self::FusedRidge { .. } => "fused-ridge",
            Self::FusedLasso { .. } => "fused-lasso",
        }
    }

    /// Checks parameter ranges and, for schemes tied to coordinates, the dimension `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |m: String| Err(PandaError::InvalidParameter(m));
        let lambda = self.lambda();
        if !(lambda > 0.0 && lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {lambda}"));
        }
        match self {
            Self::Bridge { gamma, .. } if !(0.0..=2.0).contains(gamma) => bad(format!("gamma must lie in [0, 2], got {gamma}")),
            Self::ElasticNet { sigma2, .. } if !(*sigma2 >= 0.0 && sigma2.is_finite()) => {
                bad(format!("elastic-net sigma2 must be nonnegative, got {sigma2}"))
            }
            Self::AdaptiveLasso { gamma, pilot, .. } => {
                if !(*gamma >= 0.0 && gamma.is_finite()) {
                    bad(format!("adaptive-lasso gamma must be nonnegative, got {gamma}"))
                } else if pilot.len() != p {
                    bad(format!("pilot estimate has {} entries, expected {p}", pilot.len()))
                } else if pilot.iter().any(|v| !v.is_finite()) {
                    bad("pilot estimate has non-finite entries".into())
                } else {
                    Ok(())
                }
            }
            Self::Scad { a, .. } if !(*a > 2.0) => bad(format!("SCAD a must exceed 2, got {a}")),
            Self::GroupLasso { groups, .. } => {
                let mut seen = vec![false; p];
                for g in groups {
                    if g.is_empty() {
                        return bad("empty group".into());
                    }
                    for &j in g {
                        if j >= p || seen[j] {
                            return bad(format!("groups must partition 0..{p}; index {j} is out of range or repeated"));
                        }
                        seen[j] = true;
                    }
                }
                if seen.iter().all(|&s| s) {
                    Ok(())
                } else {
                    bad("groups do not cover every coordinate".into())
                }
            }
            Self::FusedRidge { .. } | Self::FusedLasso { .. } if p < 2 => bad("fused schemes need p >= 2".into()),
            _ => Ok(()),
        }
    }
}

/// Per-coordinate variances, or a factor `L` with covariance `L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseVariance {
    Diagonal(DVector<f64>),
    Factor(DMatrix<f64>),
}

impl NoiseVariance {
    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            Self::Diagonal(v) => DMatrix::from_diagonal(v),
            Self::Factor(l) => l * l.transpose(),
        }
    }

    /// `θᵀ Cov θ`.
    pub fn quad_form(&self, theta: &DVector<f64>) -> f64 {
        match self {
            Self::Diagonal(v) => theta.iter().zip(v.iter()).map(|(t, v)| t * t * v).sum(),
            Self::Factor(l) => l.tr_mul(theta).norm_squared(),
        }
    }
}

pub fn variance_spec(scheme: &NoiseScheme, theta: &CoefVector, n_e: usize) -> Result<NoiseVariance> {
    variance_spec_with_floor(scheme, theta, n_e, DEFAULT_THETA_FLOOR)
}

pub fn variance_spec_with_floor(scheme: &NoiseScheme, theta: &CoefVector, n_e: usize, floor: f64) -> Result<NoiseVariance> {
    let p = theta.p();
    scheme.validate(p)?;
    if n_e == 0 {
        return Err(PandaError::InvalidParameter("n_e must be at least 1".into()));
    }
    if !theta.is_finite() {
        return Err(PandaError::InvalidInput("non-finite coefficients".into()));
    }
    let abs = |j: usize| theta.slopes[j].abs().max(floor);
    let ne = n_e as f64;
    let v = match scheme {
        NoiseScheme::Bridge { lambda, gamma } => {
            DVector::from_fn(p, |j, _| if *gamma == 0.0 { *lambda } else { lambda * abs(j).powf(-gamma) })
        }
        NoiseScheme::ElasticNet { lambda, sigma2 } => DVector::from_fn(p, |j, _| lambda / abs(j) + sigma2),
        NoiseScheme::AdaptiveLasso { lambda, gamma, pilot } => {
            DVector::from_fn(p, |j, _| lambda / abs(j) * pilot[j].abs().max(floor).powf(-gamma))
        }
        NoiseScheme::Scad { lambda, a } => DVector::from_fn(p, |j, _| scad_variance(*lambda, *a, ne, abs(j))),
        NoiseScheme::GroupLasso { lambda, groups } => {
            let mut v = DVector::zeros(p);
            for g in groups {
                let norm = g.iter().map(|&j| theta.slopes[j].powi(2)).sum::<f64>().sqrt().max(floor);
                let val = lambda * (g.len() as f64).sqrt() / norm;
                for &j in g {
                    v[j] = val;
                }
            }
            v
        }
        NoiseScheme::FusedRidge { lambda } => {
            return Ok(NoiseVariance::Factor(cyclic_difference(p, |_| lambda.sqrt())));
        }
        NoiseScheme::FusedLasso { lambda } => {
            let w = |k: usize| {
                let d = (theta.slopes[k] - theta.slopes[(k + 1) % p]).abs().max(floor);
                (lambda / d).sqrt()
            };
            return Ok(NoiseVariance::Factor(cyclic_difference(p, w)));
        }
    };
    Ok(NoiseVariance::Diagonal(v))
}

/// Three-branch SCAD variance at `t = |θ| > 0`, clamped at zero.
fn scad_variance(lambda: f64, a: f64, ne: f64, t: f64) -> f64 {
    let knot = ne * lambda;
    let v = if t <= knot {
        lambda / t - (a + 1.0) / (2.0 * a * a * ne)
    } else if t <= a * knot {
        (a * lambda / t - lambda * lambda * ne / (2.0 * t * t) - (2.0 * a * a - 1.0) / (2.0 * a * a * ne)) / (a - 1.0)
    } else {
        0.0
    };
    v.max(0.0)
}

/// `p × p` matrix whose column `k` carries `w(k)` at row `k` and `−w(k)` at
/// row `k+1` (cyclically), so `(Lᵀθ)_k = w(k)(θ_k − θ_{k+1})`.
fn cyclic_difference(p: usize, w: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(p, p);
    for k in 0..p {
        let wk = w(k);
        l[(k, k)] += wk;
        l[((k + 1) % p, k)] -= wk;
    }
    l
}

/// One draw of augmentation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBatch {
    pub e_x: DMatrix<f64>,
    pub e_y: DVector<f64>,
    pub scheme_snapshot: NoiseScheme,
    pub theta_snapshot: CoefVector,
}

/// Pseudo-responses for the augmentation rows: `ȳ` for non-binary families,
/// Bernoulli(ȳ) draws for the Bernoulli family.
pub fn noise_response<R: Rng + ?Sized>(family: &GlmFamily, y: &DVector<f64>, n_e: usize, rng: &mut R) -> DVector<f64> {
    let ybar = y.mean();
    match family.kind {
        FamilyKind::Bernoulli => DVector::from_fn(n_e, |_, _| if rng.gen::<f64>() < ybar { 1.0 } else { 0.0 }),
        _ => DVector::from_element(n_e, ybar),
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    scheme: &NoiseScheme,
    theta: &CoefVector,
    n_e: usize,
    family: &GlmFamily,
    y: &DVector<f64>,
    rng: &mut R,
) -> Result<NoiseBatch> {
    sample_batch_with_floor(scheme, theta, n_e, family, y, DEFAULT_THETA_FLOOR, rng)
}

pub fn sample_batch_with_floor<R: Rng + ?Sized>(
    scheme: &NoiseScheme,
    theta: &CoefVector,
    n_e: usize,
    family: &GlmFamily,
    y: &DVector<f64>,
    floor: f64,
    rng: &mut R,
) -> Result<NoiseBatch> {
    let var = variance_spec_with_floor(scheme, theta, n_e, floor)?;
    let e_x = draw_rows(&var, n_e, rng);
    let e_y = noise_response(family, y, n_e, rng);
    Ok(NoiseBatch { e_x, e_y, scheme_snapshot: scheme.clone(), theta_snapshot: theta.clone() })
}

pub(crate) fn draw_rows<R: Rng + ?Sized>(var: &NoiseVariance, n_e: usize, rng: &mut R) -> DMatrix<f64> {
    match var {
        NoiseVariance::Diagonal(v) => {
            let sd: Vec<f64> = v.iter().map(|v| v.sqrt()).collect();
            DMatrix::from_fn(n_e, v.len(), |_, j| sd[j] * rng.sample::<f64, _>(StandardNormal))
        }
        NoiseVariance::Factor(l) => {
            let z = DMatrix::from_fn(n_e, l.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            z * l.transpose()
        }
    }
}

/// Observed rows followed by the noise rows.
pub fn augment(data: &Dataset, batch: &NoiseBatch) -> Result<Dataset> {
    let (n, p) = (data.n(), data.p());
    let n_e = batch.e_x.nrows();
    if batch.e_x.ncols() != p || batch.e_y.len() != n_e {
        return Err(PandaError::Dimension(format!(
            "noise batch is {}x{} with {} responses; data has {p} predictors",
            n_e,
            batch.e_x.ncols(),
            batch.e_y.len()
        )));
    }
    if n + n_e <= p {
        return Err(PandaError::UnderAugmented { rows: n + n_e, p });
    }
    let mut x = DMatrix::zeros(n + n_e, p);
    x.rows_mut(0, n).copy_from(&data.x);
    x.rows_mut(n, n_e).copy_from(&batch.e_x);
    let mut y = DVector::zeros(n + n_e);
    y.rows_mut(0, n).copy_from(&data.y);
    y.rows_mut(n, n_e).copy_from(&batch.e_y);
    Dataset::with_names(x, y, data.column_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn theta(v: &[f64]) -> CoefVector {
        CoefVector::from_slice(0.0, v)
    }

    fn diag(v: NoiseVariance) -> DVector<f64> {
        match v {
            NoiseVariance::Diagonal(d) => d,
            NoiseVariance::Factor(_) => panic!("expected diagonal"),
        }
    }

    #[test]
    fn bridge_and_ridge_reference_values() {
        let v = diag(variance_spec(&NoiseScheme::lasso(0.5), &theta(&[2.0]), 1).unwrap());
        assert_eq!(v[0], 0.25);
        let v = diag(variance_spec(&NoiseScheme::ridge(0.5), &theta(&[2.0, 0.0, -7.0]), 3).unwrap());
        assert!(v.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn scad_first_branch_reference_value() {
        let v = diag(variance_spec(&NoiseScheme::Scad { lambda: 0.1, a: 3.7 }, &theta(&[0.5]), 10).unwrap());
        // 0.1/0.5 − 4.7/(2·3.7²·10), evaluated independently.
        let expected = 0.2 - 4.7 / (2.0 * 13.69 * 10.0);
        assert!((v[0] - expected).abs() < 1e-15);
        assert!((v[0] - 0.182834).abs() < 1e-6);
    }

    #[test]
    fn scad_is_continuous_and_vanishes_past_outer_knot() {
        let (lambda, a, ne) = (0.1, 3.7, 10usize);
        let f = |t: f64| diag(variance_spec(&NoiseScheme::Scad { lambda, a }, &theta(&[t]), ne).unwrap())[0];
        let knot = ne as f64 * lambda;
        for k in [knot, a * knot] {
            assert!((f(k - 1e-9) - f(k + 1e-9)).abs() < 1e-6, "jump at {k}");
        }
        assert_eq!(f(a * knot + 1e-6), 0.0);
        assert_eq!(f(10.0), 0.0);
    }

    #[test]
    fn group_lasso_shares_variance_within_group() {
        let scheme = NoiseScheme::GroupLasso { lambda: 1.0, groups: vec![vec![0, 1, 2, 3], vec![4]] };
        let v = diag(variance_spec(&scheme, &theta(&[1.0, 1.0, -1.0, 1.0, 0.5]), 5).unwrap());
        for j in 0..4 {
            assert_eq!(v[j], 1.0);
        }
        assert_eq!(v[4], 2.0);
    }

    #[test]
    fn floor_caps_the_variance() {
        let v = diag(variance_spec(&NoiseScheme::l0(2.0), &theta(&[0.0]), 1).unwrap());
        assert!((v[0] - 2.0 * 1e8).abs() < 1e-3);
    }

    #[test]
    fn rejects_invalid_parameters() {
        let t = theta(&[1.0, 2.0]);
        assert!(variance_spec(&NoiseScheme::lasso(0.0), &t, 1).is_err());
        assert!(variance_spec(&NoiseScheme::bridge(1.0, 2.5), &t, 1).is_err());
        assert!(variance_spec(&NoiseScheme::Scad { lambda: 1.0, a: 2.0 }, &t, 1).is_err());
        let overlapping = NoiseScheme::GroupLasso { lambda: 1.0, groups: vec![vec![0, 1], vec![1]] };
        assert!(variance_spec(&overlapping, &t, 1).is_err());
        let short = NoiseScheme::AdaptiveLasso { lambda: 1.0, gamma: 1.0, pilot: vec![1.0] };
        assert!(variance_spec(&short, &t, 1).is_err());
    }

    #[test]
    fn fused_ridge_sampling_matches_explicit_covariance() {
        // T for q = 3: T_kk = 1, T_{k+1,k} = −1, T_{1,3} = −1.
        let t = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        let target = &t * t.transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = sample_batch(
            &NoiseScheme::FusedRidge { lambda: 1.0 },
            &theta(&[0.1, 0.2, 0.3]),
            20000,
            &GlmFamily::gaussian(),
            &DVector::from_vec(vec![0.0, 1.0]),
            &mut rng,
        )
        .unwrap();
        let cov = b.e_x.tr_mul(&b.e_x) / 20000.0;
        assert!((cov - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn ridge_column_variances_near_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = sample_batch(&NoiseScheme::ridge(1.0), &theta(&[1.0, 0.0, 3.0]), 10000, &GlmFamily::gaussian(), &DVector::from_vec(vec![1.0]), &mut rng).unwrap();
        for c in b.e_x.column_iter() {
            let v = c.norm_squared() / 10000.0;
            assert!((v - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn bernoulli_pseudo_responses_track_mean() {
        let mut y = vec![0.0; 100];
        for v in y.iter_mut().take(21) {
            *v = 1.0;
        }
        let y = DVector::from_vec(y);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n_e = 5000;
        let b = sample_batch(&NoiseScheme::lasso(1.0), &theta(&[1.0]), n_e, &GlmFamily::bernoulli(), &y, &mut rng).unwrap();
        assert!(b.e_y.iter().all(|&v| v == 0.0 || v == 1.0));
        let se = (0.21f64 * 0.79 / n_e as f64).sqrt();
        assert!((b.e_y.mean() - 0.21).abs() < 3.0 * se);
    }

    #[test]
    fn augment_stacks_rows_and_checks_size() {
        let d = Dataset::new(DMatrix::from_row_slice(2, 1, &[0.5, -1.5]), DVector::from_vec(vec![1.0, 3.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&NoiseScheme::ridge(1.0), &theta(&[1.0]), 3, &GlmFamily::gaussian(), &d.y, &mut rng).unwrap();
        let a = augment(&d, &b).unwrap();
        assert_eq!(a.n(), 5);
        assert_eq!(a.x.rows(0, 2), d.x.rows(0, 2));
        assert_eq!(a.y.as_slice(), &[1.0, 3.0, 2.0, 2.0, 2.0]);

        let d = Dataset::new(DMatrix::from_element(5, 8, 1.0), DVector::from_element(5, 0.0)).unwrap();
        let b = sample_batch(&NoiseScheme::ridge(1.0), &CoefVector::zeros(8), 1, &GlmFamily::gaussian(), &d.y, &mut rng).unwrap();
        assert!(matches!(augment(&d, &b), Err(PandaError::UnderAugmented { rows: 6, p: 8 })));
    }

    #[test]
    fn gaussian_pseudo_response_is_mean() {
        let d = Dataset::new(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), DVector::from_vec(vec![1.0, 3.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = sample_batch(&NoiseScheme::ridge(1.0), &theta(&[1.0]), 2, &GlmFamily::gaussian(), &d.y, &mut rng).unwrap();
        assert_eq!(augment(&d, &b).unwrap().y.as_slice(), &[1.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            sample_batch(&NoiseScheme::lasso(0.3), &theta(&[0.4, -2.0]), 7, &GlmFamily::gaussian(), &DVector::from_vec(vec![1.0]), &mut rng).unwrap()
        };
        assert_eq!(draw(), draw());
    }
}
