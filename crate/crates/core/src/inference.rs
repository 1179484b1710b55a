//! Sandwich-variance inference from a finished run.
//!
//! Each banked iteration contributes a sandwich `A⁻¹ B A⁻¹` with `A` the
//! information of the augmented rows and `B` that of the observed rows. The
//! spread of the raw banked estimates adds a between-iteration term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{CoefVector, Dataset};
use crate::engine::PandaFit;
use crate::error::{PandaError, Result};
use crate::family::{FamilyKind, GlmFamily};
use crate::linalg::{gram_with_intercept, inverse_spd, symmetrize, SpdSolver};
use crate::noise::NoiseBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub names: Vec<String>,
    pub estimates: CoefVector,
    /// Intercept first, then slopes.
    pub std_errors: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub wald_z: Vec<f64>,
    pub alpha: f64,
    pub sigma2_hat: Option<f64>,
    pub df_nu: Option<f64>,
    /// Mean per-iteration sandwich.
    pub sigma_bar: DMatrix<f64>,
    /// Sample covariance of the raw banked estimates.
    pub lambda: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// `Σᵢ B″(ηᵢ) x̃ᵢ x̃ᵢᵀ` over the rows of `data`, intercept column first.
pub fn fisher_augmented(family: &GlmFamily, data: &Dataset, coef: &CoefVector) -> Result<DMatrix<f64>> {
    if coef.p() != data.p() {
        return Err(PandaError::Dimension(format!("{} coefficients for {} predictors", coef.p(), data.p())));
    }
    if !coef.is_finite() {
        return Err(PandaError::InvalidInput("non-finite coefficients".into()));
    }
    let eta = coef.eta(&data.x);
    let mut w = DVector::zeros(eta.len());
    for (i, &e) in eta.iter().enumerate() {
        w[i] = family.canonical_scale().log_partition(e, 2)?;
    }
    Ok(gram_with_intercept(&data.x, &w))
}

/// Slope covariance `σ² M⁻¹ (XᵀX) M⁻¹` with `M = XᵀX + penalty`.
pub fn gaussian_sandwich(xtx: &DMatrix<f64>, penalty: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let m_inv = inverse_spd(xtx + penalty, "penalized Gram matrix")?;
    let mut s = &m_inv * xtx * &m_inv * sigma2;
    symmetrize(&mut s);
    Ok(s)
}

/// Covariance of one iteration's estimate given its noise batch, on the scale
/// of `data`. Gaussian fits use the family dispersion as `σ²` and leave the
/// intercept unpenalized.
pub fn per_iteration_sigma(family: &GlmFamily, data: &Dataset, batch: &NoiseBatch, coef: &CoefVector) -> Result<DMatrix<f64>> {
    let p = data.p();
    if batch.e_x.ncols() != p {
        return Err(PandaError::Dimension(format!("noise batch has {} columns, data has {p}", batch.e_x.ncols())));
    }
    let ones = DVector::from_element(data.n(), 1.0);
    let b = if family.kind == FamilyKind::Gaussian {
        gram_with_intercept(&data.x, &ones)
    } else {
        fisher_augmented(family, data, coef)?
    };
    let mut a = b.clone();
    if family.kind == FamilyKind::Gaussian {
        let ete = batch.e_x.tr_mul(&batch.e_x);
        let mut lower = a.view_mut((1, 1), (p, p));
        lower += ete;
    } else {
        let noise = Dataset::new(batch.e_x.clone(), batch.e_y.clone())?;
        a += fisher_augmented(family, &noise, coef)?;
    }
    let a_inv = inverse_spd(a, "augmented information").map_err(|_| PandaError::UnderAugmented { rows: data.n() + batch.e_x.nrows(), p })?;
    let mut s = &a_inv * b * &a_inv;
    if family.kind == FamilyKind::Gaussian {
        s *= family.dispersion;
    }
    symmetrize(&mut s);
    Ok(s)
}

/// `σ̂² = SSE/(n − ν)` with `ν = tr(X M⁻¹ Xᵀ)`; `x` must already carry any
/// intercept column that `m` accounts for.
pub fn gaussian_sigma2(x: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>, m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = x.nrows() as f64;
    let nu = SpdSolver::new(m.clone(), "penalized Gram matrix")?
        .solve_mat(&x.transpose()).component_mul(&x.transpose()).sum();
    if !(n > nu) {
        return Err(PandaError::Inference(format!(
            "effective degrees of freedom {nu:.3} reach the sample size {n}; use more data or a stronger penalty"
        )));
    }
    let sse = (y - x * coef).norm_squared();
    if !(sse > 0.0) {
        return Err(PandaError::Inference("residuals are exactly zero; the variance estimate is degenerate".into()));
    }
    Ok((sse / (n - nu), nu))
}

fn with_intercept_column(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Sample covariance with divisor `r − 1`.
fn sample_covariance(vs: &[DVector<f64>]) -> DMatrix<f64> {
    let r = vs.len();
    let d = vs[0].len();
    let mean = vs.iter().fold(DVector::zeros(d), |acc, v| acc + v) / r as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in vs {
        let c = v - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov / (r as f64 - 1.0)
}

/// Confidence intervals for every coefficient of a fitted run, including the
/// ones thresholded to zero.
pub fn infer(fit: &PandaFit, data: &Dataset, alpha: f64) -> Result<InferenceResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PandaError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let r = fit.bank_internal.len();
    if r < 2 {
        return Err(PandaError::Inference(format!("need at least 2 banked estimates, have {r}")));
    }
    if fit.bank_batches.len() != r {
        return Err(PandaError::Inference("the fit did not keep its noise batches".into()));
    }
    if data.p() != fit.theta_hat.p() {
        return Err(PandaError::Dimension(format!("fit has {} predictors, data has {}", fit.theta_hat.p(), data.p())));
    }
    let p = data.p();
    let n = data.n();
    let mut warnings = Vec::new();
    if fit.config.n_e as f64 > n as f64 / 5.0 {
        let msg = format!("n_e = {} exceeds n/5 = {:.1}; intervals may undercover, prefer small n_e and large m", fit.config.n_e, n as f64 / 5.0);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let internal = Dataset::with_names(fit.transform.apply(&data.x), data.y.clone(), data.column_names.clone())?;
    let l = fit.transform.linear_map();
    let family = fit.family.canonical_scale();
    let gaussian = family.kind == FamilyKind::Gaussian;
    let x1 = with_intercept_column(&internal.x);
    let gram = x1.tr_mul(&x1);

    let mut sigma_bar = DMatrix::zeros(p + 1, p + 1);
    let (mut s2_sum, mut nu_sum) = (0.0, 0.0);
    for (coef, batch) in fit.bank_internal.iter().zip(&fit.bank_batches) {
        let fam = if gaussian {
            let mut m = gram.clone();
            let ete = batch.e_x.tr_mul(&batch.e_x);
            let mut lower = m.view_mut((1, 1), (p, p));
            lower += ete;
            let (s2, nu) = gaussian_sigma2(&x1, &internal.y, &coef.stacked(), &m)?;
            s2_sum += s2;
            nu_sum += nu;
            GlmFamily::gaussian_with_dispersion(s2)?
        } else {
            family
        };
        let s = per_iteration_sigma(&fam, &internal, batch, coef)?;
        sigma_bar += &l * s * l.transpose();
    }
    sigma_bar /= r as f64;
    symmetrize(&mut sigma_bar);

    let raw: Vec<DVector<f64>> = fit.theta_bank_raw.iter().map(|c| c.stacked()).collect();
    let mut lambda = sample_covariance(&raw);
    symmetrize(&mut lambda);
    let total = &sigma_bar + &lambda * (1.0 + 1.0 / r as f64);

    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0);
    let est = fit.theta_hat.stacked();
    let std_errors: Vec<f64> = total.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    let ci_lower = est.iter().zip(&std_errors).map(|(e, s)| e - z * s).collect();
    let ci_upper = est.iter().zip(&std_errors).map(|(e, s)| e + z * s).collect();
    let wald_z = est.iter().zip(&std_errors).map(|(e, s)| if *s > 0.0 { e / s } else { 0.0 }).collect();
    let mut names = vec!["(intercept)".to_string()];
    names.extend(data.column_names.iter().cloned());

    Ok(InferenceResult {
        names,
        estimates: fit.theta_hat.clone(),
        std_errors,
        ci_lower,
        ci_upper,
        wald_z,
        alpha,
        sigma2_hat: gaussian.then(|| s2_sum / r as f64),
        df_nu: gaussian.then(|| nu_sum / r as f64),
        sigma_bar,
        lambda,
        total,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_panda, PandaConfig};
    use crate::noise::NoiseScheme;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn gaussian_fisher_of_repeated_row() {
        let data = Dataset::new(DMatrix::from_element(2, 1, 1.0), DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let f = fisher_augmented(&GlmFamily::gaussian(), &data, &CoefVector::from_slice(0.3, &[2.0])).unwrap();
        assert_eq!(f, DMatrix::from_element(2, 2, 2.0));
    }

    #[test]
    fn bernoulli_fisher_at_zero_is_quarter_gram() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 1.0]);
        let data = Dataset::new(x.clone(), DVector::from_vec(vec![0.0, 1.0, 1.0])).unwrap();
        let f = fisher_augmented(&GlmFamily::bernoulli(), &data, &CoefVector::zeros(2)).unwrap();
        for j in 0..2 {
            let ss: f64 = x.column(j).iter().map(|v| v * v).sum();
            assert!((f[(j + 1, j + 1)] - 0.25 * ss).abs() < 1e-12);
        }
        assert!((f[(0, 0)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn scalar_sandwich_and_degrees_of_freedom() {
        // M = 5 + 1 = 6: variance 5/36 and ν = 5/6.
        let xtx = DMatrix::from_element(1, 1, 5.0);
        let pen = DMatrix::from_element(1, 1, 1.0);
        let s = gaussian_sandwich(&xtx, &pen, 1.0).unwrap();
        assert!((s[(0, 0)] - 5.0 / 36.0).abs() < 1e-14);
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 0.0, 1.5, 0.5]);
        let (s2, nu) = gaussian_sigma2(&x, &y, &DVector::from_element(1, 1.0), &DMatrix::from_element(1, 1, 6.0)).unwrap();
        assert!((nu - 5.0 / 6.0).abs() < 1e-14);
        assert!((s2 - 2.5 / (5.0 - 5.0 / 6.0)).abs() < 1e-14);
    }

    #[test]
    fn unpenalized_limit_is_ols_variance() {
        let xtx = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = gaussian_sandwich(&xtx, &DMatrix::zeros(2, 2), 2.0).unwrap();
        let ols = xtx.clone().try_inverse().unwrap() * 2.0;
        assert!((s - ols).amax() < 1e-12);
    }

    #[test]
    fn unpenalized_degrees_of_freedom_equal_column_count() {
        let mut rng = rng_from_seed(5);
        let x = DMatrix::from_fn(20, 3, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(20, |_, _| StandardNormal.sample(&mut rng));
        let m = x.tr_mul(&x);
        let (_, nu) = gaussian_sigma2(&x, &y, &DVector::zeros(3), &m).unwrap();
        assert!((nu - 3.0).abs() < 1e-10);
    }

    #[test]
    fn perfect_fit_is_degenerate() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = &x * DVector::from_element(1, 2.0);
        let m = x.tr_mul(&x);
        assert!(matches!(gaussian_sigma2(&x, &y, &DVector::from_element(1, 2.0), &m), Err(PandaError::Inference(_))));
    }

    fn small_gaussian(seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(60, 4, |_, _| StandardNormal.sample(&mut rng));
        let beta = DVector::from_vec(vec![1.0, 0.0, -0.5, 0.0]);
        let y = &x * beta + DVector::from_fn(60, |_, _| StandardNormal.sample(&mut rng));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn intervals_have_normal_quantile_width() {
        let data = small_gaussian(1);
        let cfg = PandaConfig { n_e: 5, m: 10, r: 10, max_iter: 50, ..PandaConfig::default() };
        let fit = run_panda(&GlmFamily::gaussian(), &data, &NoiseScheme::l0(6.0), &cfg).unwrap();
        let inf = infer(&fit, &data, 0.05).unwrap();
        for j in 0..5 {
            let w = inf.ci_upper[j] - inf.ci_lower[j];
            assert!((w - 2.0 * 1.959964 * inf.std_errors[j]).abs() < 1e-6);
            assert!(inf.ci_lower[j] < inf.ci_upper[j]);
        }
        assert!(inf.sigma2_hat.unwrap() > 0.0 && inf.df_nu.unwrap() > 0.0);
        assert!(inf.warnings.is_empty());
    }

    #[test]
    fn identical_bank_has_no_between_variance() {
        let data = small_gaussian(2);
        let cfg = PandaConfig { n_e: 5, m: 5, r: 3, max_iter: 20, ..PandaConfig::default() };
        let mut fit = run_panda(&GlmFamily::gaussian(), &data, &NoiseScheme::ridge(1.0), &cfg).unwrap();
        let first = fit.bank_internal[0].clone();
        let first_raw = fit.theta_bank_raw[0].clone();
        let batch = fit.bank_batches[0].clone();
        fit.bank_internal = vec![first; 3];
        fit.theta_bank_raw = vec![first_raw; 3];
        fit.bank_batches = vec![batch; 3];
        let inf = infer(&fit, &data, 0.05).unwrap();
        assert!(inf.lambda.amax() < 1e-20);
        assert!((&inf.total - &inf.sigma_bar).amax() < 1e-20);
    }

    #[test]
    fn single_banked_estimate_is_rejected() {
        let data = small_gaussian(3);
        let cfg = PandaConfig { n_e: 5, m: 5, r: 1, max_iter: 20, ..PandaConfig::default() };
        let fit = run_panda(&GlmFamily::gaussian(), &data, &NoiseScheme::ridge(1.0), &cfg).unwrap();
        assert!(matches!(infer(&fit, &data, 0.05), Err(PandaError::Inference(_))));
    }

    #[test]
    fn large_n_e_warns() {
        let data = small_gaussian(4);
        let cfg = PandaConfig { n_e: 20, m: 5, r: 3, max_iter: 20, ..PandaConfig::default() };
        let fit = run_panda(&GlmFamily::gaussian(), &data, &NoiseScheme::ridge(1.0), &cfg).unwrap();
        assert_eq!(infer(&fit, &data, 0.05).unwrap().warnings.len(), 1);
    }

    #[test]
    fn augmented_information_matches_leading_penalty_term() {
        // Gaussian, γ = 1, λn_e = 2 at θ_j = 0.5: the noise rows add about
        // λn_e/|θ_j| = 4 to each slope diagonal.
        let n_e = 20000;
        let lambda = 2.0 / n_e as f64;
        let theta = CoefVector::from_slice(0.0, &[0.5, 0.5, 0.5]);
        let mut rng = rng_from_seed(11);
        let batch = crate::noise::sample_batch(
            &NoiseScheme::lasso(lambda),
            &theta,
            n_e,
            &GlmFamily::gaussian(),
            &DVector::from_vec(vec![0.0, 0.0]),
            &mut rng,
        )
        .unwrap();
        let noise = Dataset::new(batch.e_x.clone(), batch.e_y.clone()).unwrap();
        let f = fisher_augmented(&GlmFamily::gaussian(), &noise, &theta).unwrap();
        for j in 1..4 {
            assert!((f[(j, j)] / 4.0 - 1.0).abs() < 0.05, "{}", f[(j, j)]);
        }
    }

    #[test]
    fn bernoulli_sandwich_tracks_sampling_spread() {
        // One fixed noise batch; the response is redrawn 5000 times from the
        // model and the refit slopes' variance is compared with the sandwich.
        let n = 200;
        let mut rng = rng_from_seed(21);
        let x = DMatrix::from_fn(n, 1, |i, _| -2.0 + 4.0 * i as f64 / (n - 1) as f64);
        let truth = CoefVector::from_slice(0.2, &[0.8]);
        let fam = GlmFamily::bernoulli();
        let prob: Vec<f64> = truth.eta(&x).iter().map(|&e| fam.mean(e)).collect();
        let draw = |rng: &mut crate::rng::PandaRng| DVector::from_fn(n, |i, _| if rand::Rng::gen::<f64>(rng) < prob[i] { 1.0 } else { 0.0 });
        let y0 = draw(&mut rng);
        let batch = crate::noise::sample_batch(&NoiseScheme::ridge(0.5), &truth, 10, &fam, &y0, &mut rng).unwrap();
        let data0 = Dataset::new(x.clone(), y0).unwrap();
        let sandwich = per_iteration_sigma(&fam, &data0, &batch, &truth).unwrap()[(1, 1)];
        let reps = 5000;
        let slopes: Vec<f64> = (0..reps)
            .map(|_| {
                let data = Dataset::new(x.clone(), draw(&mut rng)).unwrap();
                crate::engine::fit_augmented(&fam, &data, &batch, None).unwrap().slopes[0]
            })
            .collect();
        let mean = slopes.iter().sum::<f64>() / reps as f64;
        let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((sandwich / var - 1.0).abs() < 0.1, "sandwich {sandwich} empirical {var}");
    }
}
