//! Datasets, coefficient vectors and the predictor transform applied before fitting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PandaError, Result};

/// Intercept plus slopes. The intercept is stored apart from the slopes
/// because it is never penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefVector {
    pub intercept: f64,
    pub slopes: DVector<f64>,
}

impl CoefVector {
    pub fn new(intercept: f64, slopes: DVector<f64>) -> Self {
        Self { intercept, slopes }
    }

    pub fn zeros(p: usize) -> Self {
        Self::new(0.0, DVector::zeros(p))
    }

    pub fn from_slice(intercept: f64, slopes: &[f64]) -> Self {
        Self::new(intercept, DVector::from_column_slice(slopes))
    }

    /// Stacked form `(θ0, θ1, …, θp)`.
    pub fn stacked(&self) -> DVector<f64> {
        let p = self.slopes.len();
        DVector::from_fn(p + 1, |i, _| if i == 0 { self.intercept } else { self.slopes[i - 1] })
    }

    pub fn from_stacked(v: &DVector<f64>) -> Self {
        Self::new(v[0], v.rows(1, v.len() - 1).into_owned())
    }

    pub fn p(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.slopes.iter().all(|v| v.is_finite())
    }

    /// Linear predictor for every row of `x`.
    pub fn eta(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut eta = x * &self.slopes;
        eta.add_scalar_mut(self.intercept);
        eta
    }
}

/// Response vector, predictor matrix and column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub column_names: Vec<String>,
    pub centered: bool,
}

impl Dataset {
    /// Validates shapes and finiteness. Column names default to `x1..xp`.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, names)
    }

    pub fn with_names(x: DMatrix<f64>, y: DVector<f64>, column_names: Vec<String>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(PandaError::InvalidInput("dataset needs n >= 1 and p >= 1".into()));
        }
        if x.nrows() != y.len() {
            return Err(PandaError::Dimension(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if column_names.len() != x.ncols() {
            return Err(PandaError::Dimension(format!(
                "{} column names for {} predictors",
                column_names.len(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(PandaError::InvalidInput("dataset contains non-finite values".into()));
        }
        let centered = columns_centered(&x);
        Ok(Self { x, y, column_names, centered })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn mean_y(&self) -> f64 {
        self.y.mean()
    }

    /// Subset of rows, preserving order of `rows`.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let centered = columns_centered(&x);
        Dataset { x, y, column_names: self.column_names.clone(), centered }
    }
}

fn columns_centered(x: &DMatrix<f64>) -> bool {
    x.column_iter().all(|c| c.mean().abs() <= 1e-10)
}

/// How predictors are transformed before the noise-augmentation loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scaling {
    /// Subtract column means only.
    #[default]
    Center,
    /// Subtract column means, then divide each column by its Euclidean norm.
    UnitNorm,
}

/// Column means and scales used to map between the original and fitting scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTransform {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl PredictorTransform {
    pub fn fit(x: &DMatrix<f64>, scaling: Scaling) -> Result<Self> {
        let means: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
        let scales = match scaling {
            Scaling::Center => vec![1.0; x.ncols()],
            Scaling::UnitNorm => x
                .column_iter()
                .zip(&means)
                .enumerate()
                .map(|(j, (c, m))| {
                    let s = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt();
                    if s > 0.0 {
                        Ok(s)
                    } else {
                        Err(PandaError::InvalidInput(format!("predictor {} is constant", j + 1)))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self { means, scales })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.means[j]);
            col /= self.scales[j];
        }
        out
    }

    /// Coefficients on the fitting scale mapped back to the original predictors.
    pub fn to_original(&self, c: &CoefVector) -> CoefVector {
        let slopes = DVector::from_fn(c.p(), |j, _| c.slopes[j] / self.scales[j]);
        let shift: f64 = slopes.iter().zip(&self.means).map(|(b, m)| b * m).sum();
        CoefVector::new(c.intercept - shift, slopes)
    }

    /// Matrix `L` with `stacked(to_original(c)) = L · stacked(c)`.
    pub fn linear_map(&self) -> DMatrix<f64> {
        let p = self.means.len();
        let mut l = DMatrix::zeros(p + 1, p + 1);
        l[(0, 0)] = 1.0;
        for j in 0..p {
            l[(j + 1, j + 1)] = 1.0 / self.scales[j];
            l[(0, j + 1)] = -self.means[j] / self.scales[j];
        }
        l
    }
}
