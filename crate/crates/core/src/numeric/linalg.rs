use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Accumulates the weighted normal equations `XᵀWX β = XᵀWy` one row at a time.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    dim: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    total_weight: f64,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self { dim, xtx: vec![0.0; dim * dim], xty: vec![0.0; dim], total_weight: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, x: &[f64], y: f64, w: f64) {
        let d = self.dim;
        for i in 0..d {
            let wxi = w * x[i];
            self.xty[i] += wxi * y;
            for j in i..d {
                self.xtx[i * d + j] += wxi * x[j];
            }
        }
        self.total_weight += w;
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.xtx.iter_mut().zip(&other.xtx) {
            *a += b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
        self.total_weight += other.total_weight;
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Gram matrix `XᵀWX` (full, symmetric).
    pub fn gram(&self) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.xtx[a * d + b]
        })
    }

    pub fn rhs(&self) -> &[f64] {
        &self.xty
    }

    /// Solves `(XᵀWX + ridge·I) β = XᵀWy`.
    pub fn solve(&self, ridge: f64) -> Result<Vec<f64>> {
        let mut a = self.gram();
        for i in 0..self.dim {
            a[(i, i)] += ridge;
        }
        solve_symmetric(a, &self.xty)
    }
}

/// Solves a symmetric system, preferring Cholesky and falling back to LU.
pub fn solve_symmetric(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    if let Some(chol) = a.clone().cholesky() {
        let sol = chol.solve(&rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol.iter().copied().collect());
        }
    }
    a.lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .map(|s| s.iter().copied().collect())
        .ok_or_else(|| Error::EmFailure("singular least-squares system".into()))
}

/// Singular values of a symmetric positive semidefinite matrix, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}
