//! Response families.
//!
//! Gaussian, Bernoulli and Poisson use their canonical links and the usual
//! log-partition `B`. Exponential and negative binomial are parameterized
//! through a log link (log-rate and log-mean respectively); for those two
//! `log_partition` returns the function whose second derivative is the
//! per-observation Fisher information of `η`, with the first two orders as
//! its antiderivatives. The likelihood itself always uses the exact density.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{PandaError, Result};

const BERNOULLI_ETA_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyKind {
    Gaussian,
    Bernoulli,
    Poisson,
    Exponential,
    NegativeBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmFamily {
    pub kind: FamilyKind,
    /// Number of failures `r`; set only for the negative binomial.
    pub nb_failures: Option<u32>,
    /// Gaussian dispersion `σ²`; ignored by the other families.
    pub dispersion: f64,
}

impl GlmFamily {
    pub fn gaussian() -> Self {
        Self { kind: FamilyKind::Gaussian, nb_failures: None, dispersion: 1.0 }
    }

    pub fn gaussian_with_dispersion(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(PandaError::InvalidParameter(format!("dispersion must be positive, got {sigma2}")));
        }
        Ok(Self { dispersion: sigma2, ..Self::gaussian() })
    }

    pub fn bernoulli() -> Self {
        Self { kind: FamilyKind::Bernoulli, nb_failures: None, dispersion: 1.0 }
    }

    pub fn poisson() -> Self {
        Self { kind: FamilyKind::Poisson, nb_failures: None, dispersion: 1.0 }
    }

    pub fn exponential() -> Self {
        Self { kind: FamilyKind::Exponential, nb_failures: None, dispersion: 1.0 }
    }

    pub fn negative_binomial(r: u32) -> Result<Self> {
        if r == 0 {
            return Err(PandaError::InvalidParameter("negative binomial needs r >= 1".into()));
        }
        Ok(Self { kind: FamilyKind::NegativeBinomial, nb_failures: Some(r), dispersion: 1.0 })
    }

    /// Same family at unit dispersion; the augmentation loop always runs on this scale.
    pub fn canonical_scale(&self) -> Self {
        Self { dispersion: 1.0, ..*self }
    }

    fn r(&self) -> f64 {
        self.nb_failures.unwrap_or(1) as f64
    }

    /// `B(η)`, `B′(η)` or `B″(η)`.
    pub fn log_partition(&self, eta: f64, order: u8) -> Result<f64> {
        if !eta.is_finite() {
            return Err(PandaError::Domain(format!("non-finite linear predictor {eta}")));
        }
        let v = match (self.kind, order) {
            (FamilyKind::Gaussian | FamilyKind::Exponential, 0) => 0.5 * eta * eta,
            (FamilyKind::Gaussian | FamilyKind::Exponential, 1) => eta,
            (FamilyKind::Gaussian | FamilyKind::Exponential, 2) => 1.0,
            (FamilyKind::Bernoulli, 0) => softplus(eta),
            (FamilyKind::Bernoulli, 1) => sigmoid(eta.clamp(-BERNOULLI_ETA_CLAMP, BERNOULLI_ETA_CLAMP)),
            (FamilyKind::Bernoulli, 2) => {
                let s = sigmoid(eta.clamp(-BERNOULLI_ETA_CLAMP, BERNOULLI_ETA_CLAMP));
                s * (1.0 - s)
            }
            (FamilyKind::Poisson, 0..=2) => eta.exp(),
            (FamilyKind::NegativeBinomial, 0) => {
                let r = self.r();
                -r * dilog(-(eta - r.ln()).exp())
            }
            (FamilyKind::NegativeBinomial, 1) => {
                let r = self.r();
                r * softplus(eta - r.ln())
            }
            (FamilyKind::NegativeBinomial, 2) => {
                let r = self.r();
                r * sigmoid(eta - r.ln())
            }
            (_, o) => return Err(PandaError::InvalidParameter(format!("order must be 0, 1 or 2, got {o}"))),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(PandaError::Domain(format!("log-partition order {order} overflows at eta = {eta}")))
        }
    }

    /// Fisher information of `η` for one observation (the `B″` used in weights).
    pub fn info(&self, eta: f64) -> f64 {
        self.log_partition(eta, 2).unwrap_or(f64::INFINITY)
    }

    /// Log base measure `h(y)`, or for the log-link families the part of the
    /// log density that does not involve `η`.
    pub fn log_base(&self, y: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => -0.5 * y * y / self.dispersion - 0.5 * (2.0 * PI * self.dispersion).ln(),
            FamilyKind::Bernoulli | FamilyKind::Exponential => 0.0,
            FamilyKind::Poisson => -ln_gamma(y + 1.0),
            FamilyKind::NegativeBinomial => {
                let r = self.r();
                ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0) + r * r.ln()
            }
        }
    }

    /// Negative log-density of one observation. Returns `+∞` on overflow so
    /// that line searches can reject the step.
    pub fn nll_obs(&self, y: f64, eta: f64) -> f64 {
        let v = match self.kind {
            FamilyKind::Gaussian => 0.5 * (y - eta).powi(2) / self.dispersion + 0.5 * (2.0 * PI * self.dispersion).ln(),
            FamilyKind::Bernoulli => softplus(eta) - y * eta,
            FamilyKind::Poisson => eta.exp() - y * eta + ln_gamma(y + 1.0),
            FamilyKind::Exponential => y * eta.exp() - eta,
            FamilyKind::NegativeBinomial => {
                let r = self.r();
                (r + y) * ln_r_plus_exp(r, eta) - y * eta - self.log_base(y)
            }
        };
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    /// First derivative of `nll_obs` in `η`.
    pub fn grad_obs(&self, y: f64, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => (eta - y) / self.dispersion,
            FamilyKind::Bernoulli => sigmoid(eta.clamp(-BERNOULLI_ETA_CLAMP, BERNOULLI_ETA_CLAMP)) - y,
            FamilyKind::Poisson => eta.exp() - y,
            FamilyKind::Exponential => y * eta.exp() - 1.0,
            FamilyKind::NegativeBinomial => (self.r() + y) * sigmoid(eta - self.r().ln()) - y,
        }
    }

    /// Second derivative of `nll_obs` in `η` (observed information).
    pub fn hess_obs(&self, y: f64, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0 / self.dispersion,
            FamilyKind::Bernoulli | FamilyKind::Poisson => self.info(eta),
            FamilyKind::Exponential => y * eta.exp(),
            FamilyKind::NegativeBinomial => {
                let s = sigmoid(eta - self.r().ln());
                (self.r() + y) * s * (1.0 - s)
            }
        }
    }

    /// Mean response at `η`.
    pub fn mean(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => eta,
            FamilyKind::Bernoulli => sigmoid(eta),
            FamilyKind::Poisson | FamilyKind::NegativeBinomial => eta.exp(),
            FamilyKind::Exponential => (-eta).exp(),
        }
    }

    /// `η` whose mean equals `mu`, clamped away from the boundary of the mean space.
    pub fn link(&self, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => mu,
            FamilyKind::Bernoulli => {
                let m = mu.clamp(1e-6, 1.0 - 1e-6);
                (m / (1.0 - m)).ln()
            }
            FamilyKind::Poisson | FamilyKind::NegativeBinomial => mu.max(1e-6).ln(),
            FamilyKind::Exponential => -mu.max(1e-6).ln(),
        }
    }

    /// Curvature constant `κ(θ0)` of the augmented-loss convergence test.
    pub fn kappa(&self, theta0: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 8.0,
            FamilyKind::Bernoulli => 2.0 * (2.0 * theta0 - 4.0 * softplus(2.0 * theta0)).exp(),
            FamilyKind::Poisson => 2.0 * (2.0 * theta0).exp(),
            FamilyKind::Exponential => 2.0,
            FamilyKind::NegativeBinomial => {
                let r = self.r();
                2.0 * r * r * (2.0 * theta0 - 2.0 * ln_r_plus_exp(r, theta0)).exp()
            }
        }
    }

    pub fn validate_response(&self, y: f64) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::Gaussian => y.is_finite(),
            FamilyKind::Bernoulli => y == 0.0 || y == 1.0,
            FamilyKind::Poisson | FamilyKind::NegativeBinomial | FamilyKind::Exponential => y.is_finite() && y >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(PandaError::InvalidInput(format!("response {y} outside the support of the {self} family")))
        }
    }
}

impl fmt::Display for GlmFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FamilyKind::Gaussian => write!(f, "gaussian"),
            FamilyKind::Bernoulli => write!(f, "bernoulli"),
            FamilyKind::Poisson => write!(f, "poisson"),
            FamilyKind::Exponential => write!(f, "exponential"),
            FamilyKind::NegativeBinomial => write!(f, "negbin"),
        }
    }
}

impl FromStr for GlmFamily {
    type Err = PandaError;

    /// Accepts `gaussian`, `bernoulli`/`binomial`/`logistic`, `poisson`,
    /// `exponential`, and `negbin:<r>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "gaussian" | "normal" | "linear" => Ok(Self::gaussian()),
            "bernoulli" | "binomial" | "logistic" => Ok(Self::bernoulli()),
            "poisson" => Ok(Self::poisson()),
            "exponential" => Ok(Self::exponential()),
            other => {
                if let Some(r) = other.strip_prefix("negbin:").or_else(|| other.strip_prefix("nb:")) {
                    let r: u32 = r
                        .parse()
                        .map_err(|_| PandaError::InvalidParameter(format!("bad negative binomial r in '{s}'")))?;
                    Self::negative_binomial(r)
                } else {
                    Err(PandaError::InvalidParameter(format!(
                        "unknown family '{s}' (expected gaussian, bernoulli, poisson, exponential or negbin:<r>)"
                    )))
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn ln_r_plus_exp(r: f64, eta: f64) -> f64 {
    r.ln() + softplus(eta - r.ln())
}

/// Dilogarithm `Li₂(z)` for `z ≤ 0`.
fn dilog(z: f64) -> f64 {
    debug_assert!(z <= 0.0);
    if z < -1.0 {
        let l = (-z).ln();
        -PI * PI / 6.0 - 0.5 * l * l - dilog(1.0 / z)
    } else if z < -0.5 {
        // Landen: maps [-1, -1/2) into (1/3, 1/2].
        let l = (1.0 - z).ln();
        -dilog_series(z / (z - 1.0)) - 0.5 * l * l
    } else {
        dilog_series(z)
    }
}

fn dilog_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = 0.0;
    for k in 1..200 {
        let add = term / (k * k) as f64;
        sum += add;
        if add.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
        term *= z;
    }
    sum
}
