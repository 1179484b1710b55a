//! Simulation designs, data generation and model-error metrics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{PandaError, Result};
use crate::family::{FamilyKind, GlmFamily};
use crate::linalg::cholesky;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredictorLaw {
    StdNormal,
    Ar1Normal { rho: f64 },
    Uniform { lo: f64, hi: f64 },
    /// AR(1) Gaussian columns followed by `binary` independent Bernoulli(½) columns.
    Ar1WithBernoulli { rho: f64, binary: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub family: GlmFamily,
    pub n: usize,
    pub beta_true: Vec<f64>,
    pub intercept: f64,
    pub predictor_law: PredictorLaw,
    /// Gaussian noise standard deviation.
    pub sigma: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl SimDesign {
    pub fn p(&self) -> usize {
        self.beta_true.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PandaError::InvalidParameter(m));
        if self.n == 0 || self.beta_true.is_empty() {
            return bad("design needs n >= 1 and p >= 1".into());
        }
        match self.predictor_law {
            PredictorLaw::Ar1Normal { rho } | PredictorLaw::Ar1WithBernoulli { rho, .. } if !(rho > -1.0 && rho < 1.0) => {
                bad(format!("rho must lie in (-1, 1), got {rho}"))
            }
            PredictorLaw::Ar1WithBernoulli { binary, .. } if binary > self.p() => bad("more binary columns than predictors".into()),
            PredictorLaw::Uniform { lo, hi } if !(lo < hi) => bad("uniform law needs lo < hi".into()),
            _ if !(self.sigma > 0.0) && self.family.kind == FamilyKind::Gaussian => bad("sigma must be positive".into()),
            _ => Ok(()),
        }
    }
}

fn ar1_factor(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    let cov = DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()));
    Ok(cholesky(cov, "AR(1) correlation")?.unpack())
}

pub fn draw_predictors<R: Rng + ?Sized>(law: &PredictorLaw, n: usize, p: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    Ok(match *law {
        PredictorLaw::StdNormal => DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal)),
        PredictorLaw::Uniform { lo, hi } => DMatrix::from_fn(n, p, |_, _| rng.gen_range(lo..hi)),
        PredictorLaw::Ar1Normal { rho } => {
            let l = ar1_factor(p, rho)?;
            let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            z * l.transpose()
        }
        PredictorLaw::Ar1WithBernoulli { rho, binary } => {
            let q = p - binary;
            let mut x = DMatrix::zeros(n, p);
            if q > 0 {
                let l = ar1_factor(q, rho)?;
                let z = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal));
                x.columns_mut(0, q).copy_from(&(z * l.transpose()));
            }
            for j in q..p {
                for i in 0..n {
                    x[(i, j)] = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                }
            }
            x
        }
    })
}

/// One draw from the response distribution with linear predictor `eta`.
pub fn draw_response<R: Rng + ?Sized>(family: &GlmFamily, eta: f64, sigma: f64, rng: &mut R) -> Result<f64> {
    let mu = family.mean(eta);
    let bad = |what: &str| PandaError::Domain(format!("cannot draw {what} response at eta = {eta}"));
    Ok(match family.kind {
        FamilyKind::Gaussian => eta + sigma * rng.sample::<f64, _>(StandardNormal),
        FamilyKind::Bernoulli => (rng.gen::<f64>() < mu) as u8 as f64,
        FamilyKind::Poisson => Poisson::new(mu).map_err(|_| bad("Poisson"))?.sample(rng),
        FamilyKind::Exponential => -(1.0 - rng.gen::<f64>()).ln() * mu,
        FamilyKind::NegativeBinomial => {
            let r = family.nb_failures.unwrap_or(1) as f64;
            let lam = Gamma::new(r, mu / r).map_err(|_| bad("negative binomial"))?.sample(rng);
            if lam > 0.0 {
                Poisson::new(lam).map_err(|_| bad("negative binomial"))?.sample(rng)
            } else {
                0.0
            }
        }
    })
}

/// Replicate `index` of the design; reproducible for a fixed design seed.
pub fn generate(design: &SimDesign, index: usize) -> Result<(Dataset, Vec<f64>)> {
    design.validate()?;
    let mut rng = rng_from_seed(derive_seed(design.seed, &[index as u64]));
    let p = design.p();
    let x = draw_predictors(&design.predictor_law, design.n, p, &mut rng)?;
    let beta = DVector::from_column_slice(&design.beta_true);
    let eta = (&x * &beta).add_scalar(design.intercept);
    let y = eta
        .iter()
        .map(|&e| draw_response(&design.family, e, design.sigma, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(x, DVector::from_vec(y))?, design.beta_true.clone()))
}

/// Analytic `E[x xᵀ]` for a predictor law.
pub fn moment_matrix(law: &PredictorLaw, p: usize) -> DMatrix<f64> {
    match *law {
        PredictorLaw::StdNormal => DMatrix::identity(p, p),
        PredictorLaw::Ar1Normal { rho } => DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs())),
        PredictorLaw::Uniform { lo, hi } => {
            let mean = 0.5 * (lo + hi);
            let second = (lo * lo + lo * hi + hi * hi) / 3.0;
            DMatrix::from_fn(p, p, |i, j| if i == j { second } else { mean * mean })
        }
        PredictorLaw::Ar1WithBernoulli { rho, binary } => {
            let q = p - binary;
            DMatrix::from_fn(p, p, |i, j| match (i < q, j < q) {
                (true, true) => rho.powi((i as i32 - j as i32).abs()),
                (false, false) => {
                    if i == j {
                        0.5
                    } else {
                        0.25
                    }
                }
                _ => 0.0,
            })
        }
    }
}

/// `(β̂ − β)ᵀ E[x xᵀ] (β̂ − β)`.
pub fn model_error(beta_hat: &[f64], beta_true: &[f64], law: &PredictorLaw) -> Result<f64> {
    if beta_hat.len() != beta_true.len() {
        return Err(PandaError::Dimension(format!("{} estimates for {} coefficients", beta_hat.len(), beta_true.len())));
    }
    let d = DVector::from_fn(beta_hat.len(), |j, _| beta_hat[j] - beta_true[j]);
    let m = moment_matrix(law, d.len());
    Ok(d.dot(&(m * &d)))
}
