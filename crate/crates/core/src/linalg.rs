use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{PandaError, Result};

/// Cholesky factor, rejecting matrices where some squared pivot falls below
/// `1e-12` of its own diagonal entry (scale-free rank check).
pub(crate) fn cholesky(a: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let diag = a.diagonal();
    let chol = Cholesky::new(a).ok_or_else(|| PandaError::Singular(format!("{what} is not positive definite")))?;
    let min_ratio = chol.l_dirty().diagonal().iter().zip(diag.iter()).fold(f64::INFINITY, |m, (l, d)| m.min(l * l / d));
    if !(min_ratio > 1e-12) {
        return Err(PandaError::Singular(format!("{what} is numerically rank deficient")));
    }
    Ok(chol)
}

/// Symmetric positive definite system solved after scaling to unit diagonal,
/// so rows of wildly different magnitude factor reliably.
pub(crate) struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
    inv_sqrt_diag: DVector<f64>,
}

impl SpdSolver {
    pub fn new(mut a: DMatrix<f64>, what: &str) -> Result<Self> {
        let n = a.nrows();
        let d = a.diagonal();
        if d.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(PandaError::Singular(format!("{what} is not positive definite")));
        }
        let s = d.map(|v| 1.0 / v.sqrt());
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] *= s[i] * s[j];
            }
        }
        Ok(Self { chol: cholesky(a, what)?, inv_sqrt_diag: s })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.chol.solve(&b.component_mul(&self.inv_sqrt_diag));
        y.component_mul(&self.inv_sqrt_diag)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.inv_sqrt_diag[i];
        }
        self.chol.solve_mut(&mut y);
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.inv_sqrt_diag[i];
        }
        y
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.inv_sqrt_diag.len();
        let mut inv = self.solve_mat(&DMatrix::identity(n, n));
        symmetrize(&mut inv);
        inv
    }
}

pub(crate) fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(SpdSolver::new(a, what)?.solve(b))
}

pub(crate) fn inverse_spd(a: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(SpdSolver::new(a, what)?.inverse())
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `XᵀX` with a leading column of ones prepended to `X`.
pub(crate) fn gram_with_intercept(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut g = DMatrix::zeros(p + 1, p + 1);
    let mut wx = x.clone();
    for i in 0..n {
        wx.row_mut(i).scale_mut(w[i]);
    }
    g[(0, 0)] = w.sum();
    for j in 0..p {
        let s = wx.column(j).sum();
        g[(0, j + 1)] = s;
        g[(j + 1, 0)] = s;
    }
    let xtwx = x.tr_mul(&wx);
    g.view_mut((1, 1), (p, p)).copy_from(&xtwx);
    g
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigenvalues().min()
}
