//! Small dense linear-algebra helpers: rank-revealing least squares and
//! sample moments.

use nalgebra::{DMatrix, DVector, Dyn, SVD};

use crate::error::{Error, Result};

/// Condition number above which a regression design triggers a warning.
pub const CONDITION_WARN: f64 = 1e8;

/// Least-squares solver backed by a thin SVD of the design matrix.
///
/// Construction fails when the design is numerically rank deficient, so a
/// successful solver always has a unique solution.
pub struct OlsSolver {
    svd: SVD<f64, Dyn, Dyn>,
    tol: f64,
    condition: f64,
}

impl OlsSolver {
    pub fn new(design: &DMatrix<f64>, context: &str) -> Result<Self> {
        let (n, p) = design.shape();
        if p == 0 || n < p {
            return Err(Error::InsufficientData {
                context: context.to_string(),
                required: p.max(1),
                actual: n,
            });
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context.to_string()));
        }
        let svd = SVD::new(design.clone(), true, true);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        let tol = f64::EPSILON * n.max(p) as f64 * s_max;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank < p || s_max == 0.0 {
            return Err(Error::RankDeficient {
                context: context.to_string(),
                rank,
                columns: p,
            });
        }
        let condition = s_max / s_min;
        if condition > CONDITION_WARN {
            log::warn!("{context}: ill-conditioned design (condition number {condition:.3e})");
        }
        Ok(OlsSolver { svd, tol, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Coefficients for every right-hand-side column of `y`.
    pub fn solve(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.svd
            .solve(y, self.tol)
            .expect("svd computed with both singular-vector sets")
    }

    pub fn solve_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        self.svd
            .solve(y, self.tol)
            .expect("svd computed with both singular-vector sets")
    }
}

/// Result of a single-response OLS fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub residuals: DVector<f64>,
}

pub fn ols(design: &DMatrix<f64>, y: &DVector<f64>, context: &str) -> Result<OlsFit> {
    if design.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected: design.nrows(),
            actual: y.len(),
        });
    }
    let solver = OlsSolver::new(design, context)?;
    let coef = solver.solve_vec(y);
    let residuals = y - design * &coef;
    Ok(OlsFit { coef, residuals })
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample covariance (n-1 denominator) of two equal-length slices.
pub fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

pub fn sample_var(a: &[f64]) -> f64 {
    sample_cov(a, a)
}

/// Column-wise sample covariance matrix (n-1 denominator) of a T×L matrix.
pub fn sample_cov_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    centered.transpose() * &centered / (n - 1.0)
}
