//! Symmetric positive-definite factorizations used by every detector.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Precision matrix `A = Σ⁻¹` obtained from one factorization of `Σ`.
///
/// Diagonal covariances (the `φ = 1` regularization) skip the dense path.
#[derive(Debug, Clone)]
pub enum Precision {
    Diagonal(DVector<f64>),
    Dense {
        /// Lower Cholesky factor of `Σ`.
        lower: DMatrix<f64>,
        inverse: DMatrix<f64>,
    },
}

impl Precision {
    /// Factorizes `cov`; failure of the Cholesky factorization is reported as
    /// not positive-definite, carrying the smallest eigenvalue for diagnosis.
    pub fn from_cov(cov: &DMatrix<f64>, what: &str) -> Result<Self> {
        let p = cov.nrows();
        if cov.ncols() != p {
            return Err(Error::InvalidParameter(format!(
                "{what} must be square, got {}x{}",
                p,
                cov.ncols()
            )));
        }
        if is_diagonal(cov) {
            let diag = cov.diagonal();
            if let Some(&bad) = diag.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::NotPositiveDefinite {
                    what: what.to_string(),
                    min_eigenvalue: bad,
                });
            }
            return Ok(Precision::Diagonal(diag.map(|v| 1.0 / v)));
        }
        match cov.clone().cholesky() {
            Some(chol) => {
                let inverse = chol.inverse();
                Ok(Precision::Dense {
                    lower: chol.l(),
                    inverse,
                })
            }
            None => Err(Error::NotPositiveDefinite {
                what: what.to_string(),
                min_eigenvalue: min_eigenvalue(cov),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Precision::Diagonal(d) => d.len(),
            Precision::Dense { inverse, .. } => inverse.nrows(),
        }
    }

    /// `A v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Precision::Diagonal(d) => v.component_mul(d),
            Precision::Dense { inverse, .. } => inverse * v,
        }
    }

    /// `vᵀ A v`.
    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        match self {
            Precision::Diagonal(d) => v.iter().zip(d.iter()).map(|(x, a)| x * x * a).sum(),
            Precision::Dense { lower, .. } => {
                let w = lower
                    .solve_lower_triangular(v)
                    .expect("Cholesky factor has a positive diagonal");
                w.norm_squared()
            }
        }
    }

    /// `vᵀ A² v = ‖A v‖²`.
    pub fn quad_sq(&self, v: &DVector<f64>) -> f64 {
        match self {
            Precision::Diagonal(d) => v
                .iter()
                .zip(d.iter())
                .map(|(x, a)| (x * a) * (x * a))
                .sum(),
            Precision::Dense { inverse, .. } => (inverse * v).norm_squared(),
        }
    }

    /// `tr(A)`.
    pub fn trace(&self) -> f64 {
        match self {
            Precision::Diagonal(d) => d.sum(),
            Precision::Dense { inverse, .. } => inverse.trace(),
        }
    }

    /// `tr(A²)`; `A` is symmetric so this is its squared Frobenius norm.
    pub fn trace_sq(&self) -> f64 {
        match self {
            Precision::Diagonal(d) => d.norm_squared(),
            Precision::Dense { inverse, .. } => inverse.norm_squared(),
        }
    }
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let p = m.nrows();
    (0..p).all(|j| (0..p).all(|i| i == j || m[(i, j)] == 0.0))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
