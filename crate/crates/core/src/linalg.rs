//! Lower-triangular factors and the few dense operations the mixture code needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular `d x d` matrix stored densely in row-major order.
///
/// Used as the scale factor `S` of a mixture component, with covariance `S S^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    /// Build from row-major entries; entries above the diagonal must be zero.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "factor needs {} entries, got {}",
                dim * dim,
                data.len()
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "factor entry ({i},{j}) above the diagonal is nonzero"
                    )));
                }
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("factor has non-finite entries".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = s;
        }
        Self { dim, data }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &v) in diag.iter().enumerate() {
            data[i * dim + i] = v;
        }
        Self { dim, data }
    }

    /// Cholesky factor of a symmetric positive-definite matrix given row-major.
    pub fn cholesky(dim: usize, cov: &[f64]) -> Result<Self> {
        if cov.len() != dim * dim {
            return Err(Error::InvalidInput("covariance has wrong size".into()));
        }
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut s = cov[i * dim + j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Numeric(format!("covariance not positive definite at pivot {i}")));
                    }
                    l[i * dim + i] = s.sqrt();
                } else {
                    l[i * dim + j] = s / l[j * dim + j];
                }
            }
        }
        Ok(Self { dim, data: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dim).map(move |i| self.data[i * self.dim + i])
    }

    pub fn has_positive_diagonal(&self) -> bool {
        self.diag().all(|v| v > 0.0)
    }

    /// `log |S|`, the sum of the log diagonal.
    pub fn log_det(&self) -> f64 {
        self.diag().map(f64::ln).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// `S x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                let row = &self.data[i * d..i * d + i + 1];
                row.iter().zip(&x[..=i]).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Solve `S y = b` by forward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut y = vec![0.0; d];
        for i in 0..d {
            let row = &self.data[i * d..i * d + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] = (b[i] - s) / self.data[i * d + i];
        }
        y
    }

    /// Solve `S^T y = b` by back substitution.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut y = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = b[i];
            for k in (i + 1)..d {
                s -= self.data[k * d + i] * y[k];
            }
            y[i] = s / self.data[i * d + i];
        }
        y
    }

    /// `S S^T` in row-major order.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                c[i * d + j] = s;
                c[j * d + i] = s;
            }
        }
        c
    }
}
