//! Checks shared by the property suite and the acceptance target.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use panda_core::rng::rng_from_seed;
use panda_core::*;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_problem(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(p, |j, _| if j % 2 == 0 { 1.0 + 0.5 * j as f64 } else { 0.0 });
    let y = &x * beta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Dataset::new(x, y).unwrap()
}

pub fn families() -> Vec<GlmFamily> {
    vec![
        GlmFamily::gaussian(),
        GlmFamily::bernoulli(),
        GlmFamily::poisson(),
        GlmFamily::exponential(),
        GlmFamily::negative_binomial(3).unwrap(),
    ]
}

/// Largest relative gap between `B′`, `B″` and central differences at `eta`.
pub fn log_partition_fd_error(f: &GlmFamily, eta: f64) -> f64 {
    let h = 1e-5;
    let b = |e: f64, k: u8| f.log_partition(e, k).unwrap();
    let d1 = (b(eta + h, 0) - b(eta - h, 0)) / (2.0 * h);
    let d2 = (b(eta + h, 1) - b(eta - h, 1)) / (2.0 * h);
    let rel = |fd: f64, exact: f64| (fd - exact).abs() / exact.abs().max(1e-3);
    rel(d1, b(eta, 1)).max(rel(d2, b(eta, 2)))
}

/// ℓ∞ gap between one engine step and `(XᵀX + e_xᵀe_x)⁻¹Xᵀy` on centered data.
pub fn weighted_ridge_gap(seed: u64, n: usize, p: usize) -> f64 {
    let data = gaussian_problem(seed, n, p);
    let xc = PredictorTransform::fit(&data.x, Scaling::Center).unwrap().apply(&data.x);
    let centered = Dataset::new(xc.clone(), data.y.clone()).unwrap();
    let theta = CoefVector::new(0.0, DVector::from_fn(p, |j, _| 0.3 + 0.2 * j as f64));
    let mut rng = rng_from_seed(seed ^ 0xABCD);
    let batch = sample_batch(&NoiseScheme::lasso(0.5), &theta, 3 + (seed as usize % 7), &GlmFamily::gaussian(), &data.y, &mut rng).unwrap();
    let step = fit_augmented(&GlmFamily::gaussian(), &centered, &batch, None).unwrap();
    let m = xc.tr_mul(&xc) + batch.e_x.tr_mul(&batch.e_x);
    let yc = data.y.add_scalar(-data.mean_y());
    let oracle = m.lu().solve(&xc.tr_mul(&yc)).unwrap();
    (step.slopes - oracle).amax()
}

/// `(Monte Carlo mean, its standard error, closed form)` of the Gaussian
/// augmented penalty `Σᵢ(Σⱼ θⱼ e_ij)²` over `batches` draws.
pub fn penalty_monte_carlo(scheme: &NoiseScheme, theta: &[f64], n_e: usize, batches: usize, seed: u64) -> (f64, f64, f64) {
    let coef = CoefVector::from_slice(0.0, theta);
    let y = DVector::from_element(2, 0.0);
    let mut rng = rng_from_seed(seed);
    let draws: Vec<f64> = (0..batches)
        .map(|_| {
            let b = sample_batch(scheme, &coef, n_e, &GlmFamily::gaussian(), &y, &mut rng).unwrap();
            (&b.e_x * &coef.slopes).norm_squared()
        })
        .collect();
    let k = batches as f64;
    let mean = draws.iter().sum::<f64>() / k;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt(), closed_form_penalty(scheme, theta, n_e))
}

/// Expected Gaussian penalty of each noise design, written out by hand.
pub fn closed_form_penalty(scheme: &NoiseScheme, theta: &[f64], n_e: usize) -> f64 {
    let ne = n_e as f64;
    match scheme {
        NoiseScheme::Bridge { lambda, gamma } => lambda * ne * theta.iter().map(|t| t.abs().powf(2.0 - gamma)).sum::<f64>(),
        NoiseScheme::ElasticNet { lambda, sigma2 } => {
            lambda * ne * theta.iter().map(|t| t.abs()).sum::<f64>() + sigma2 * ne * theta.iter().map(|t| t * t).sum::<f64>()
        }
        NoiseScheme::GroupLasso { lambda, groups } => {
            lambda
                * ne
                * groups
                    .iter()
                    .map(|g| (g.len() as f64).sqrt() * g.iter().map(|&j| theta[j] * theta[j]).sum::<f64>().sqrt())
                    .sum::<f64>()
        }
        other => panic!("no closed form wired for {}", other.name()),
    }
}

/// ℓ∞ gap between the mean of `m` per-batch minimizers and the minimizer of
/// the mean of the `m` augmented losses, 30×4 Gaussian problem, `n_e = 200`.
pub fn theta_bar_vs_theta_hat(seed: u64, m: usize) -> f64 {
    let data = gaussian_problem(seed, 30, 4);
    let xc = PredictorTransform::fit(&data.x, Scaling::Center).unwrap().apply(&data.x);
    let centered = Dataset::new(xc.clone(), data.y.clone()).unwrap();
    let ols = fit_mle(&GlmFamily::gaussian(), &centered, None, None).unwrap();
    let mut rng = rng_from_seed(seed.wrapping_mul(31) + 7);
    let scheme = NoiseScheme::lasso(0.05);
    let mut mean_min = DVector::zeros(4);
    let mut mean_gram = DMatrix::zeros(4, 4);
    for _ in 0..m {
        let b = sample_batch(&scheme, &ols, 200, &GlmFamily::gaussian(), &data.y, &mut rng).unwrap();
        mean_min += fit_augmented(&GlmFamily::gaussian(), &centered, &b, None).unwrap().slopes / m as f64;
        mean_gram += b.e_x.tr_mul(&b.e_x) / m as f64;
    }
    let yc = data.y.add_scalar(-data.mean_y());
    let min_mean = (xc.tr_mul(&xc) + mean_gram).lu().solve(&xc.tr_mul(&yc)).unwrap();
    (mean_min - min_mean).amax()
}

/// Diagonals of the per-iteration Gaussian sandwich for a fixed noise draw
/// scaled to each `λn_e` in `grid`.
pub fn sandwich_diagonals(seed: u64, grid: &[f64]) -> Vec<DVector<f64>> {
    let data = gaussian_problem(seed, 25, 3);
    let xc = PredictorTransform::fit(&data.x, Scaling::Center).unwrap().apply(&data.x);
    let ones = DMatrix::from_element(data.n(), 1, 1.0);
    let x1 = DMatrix::from_fn(data.n(), 4, |i, j| if j == 0 { ones[(i, 0)] } else { xc[(i, j - 1)] });
    let mut rng = rng_from_seed(seed + 1);
    let z = DMatrix::from_fn(50, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let theta = [0.8, 0.05, 1.5];
    grid.iter()
        .map(|lne| {
            let lambda = lne / 50.0;
            let d = DMatrix::from_fn(50, 3, |i, j| z[(i, j)] * (lambda / f64::abs(theta[j])).sqrt());
            let mut pen = DMatrix::zeros(4, 4);
            pen.view_mut((1, 1), (3, 3)).copy_from(&d.tr_mul(&d));
            gaussian_sandwich(&x1.tr_mul(&x1), &pen, 1.0).unwrap().diagonal()
        })
        .collect()
}

/// Minimum eigenvalue of `Σ̄ + (1+1/r)Λ` relative to its trace.
pub fn total_variance_min_eig(family: GlmFamily, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let n = 60;
    let x = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
    let beta = [0.8, 0.0, -0.6];
    let y = DVector::from_fn(n, |i, _| {
        let eta = 0.2 + (0..3).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
        panda_core::sim::draw_response(&family, eta, 1.0, &mut rng).unwrap()
    });
    let data = Dataset::new(x, y).unwrap();
    let cfg = PandaConfig { n_e: 5, m: 10, r: 10, max_iter: 40, seed, ..PandaConfig::default() };
    let fit = run_panda(&family, &data, &NoiseScheme::lasso(0.2), &cfg).unwrap();
    let inf = infer(&fit, &data, 0.05).unwrap();
    min_eigenvalue(&inf.total) / inf.total.trace()
}
