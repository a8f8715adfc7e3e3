//! First- and second-order statistics of token-embedding lists.
//!
//! Covariances use the population convention (divide by `n`) and are kept in
//! factored form `Σ = B Bᵀ` with `B[:, j] = (x_j - μ) / √n`, so nothing here
//! materializes a `d x d` matrix unless asked to.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor_io::TokenMatrix;

/// Absolute floor on `‖μ‖₂` below which normalization is refused.
pub const MEAN_NORM_FLOOR: f64 = 1e-12;

/// Anything that exposes a `d x n` matrix of token columns.
pub trait Tokens {
    fn matrix(&self) -> &DMatrix<f64>;
}

impl Tokens for DMatrix<f64> {
    fn matrix(&self) -> &DMatrix<f64> {
        self
    }
}

impl Tokens for TokenMatrix {
    fn matrix(&self) -> &DMatrix<f64> {
        self.values()
    }
}

impl<T: Tokens + ?Sized> Tokens for &T {
    fn matrix(&self) -> &DMatrix<f64> {
        (**self).matrix()
    }
}

/// Mean vector `μ` and factor `B` of a token list.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mu: DVector<f64>,
    /// `d x n`, `Σ = B Bᵀ`.
    pub factor: DMatrix<f64>,
    pub trace_sigma: f64,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Dense `d x d` covariance. Only for small `d`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Arithmetic mean of the columns.
pub fn mean_pool(x: impl Tokens) -> DVector<f64> {
    let m = x.matrix();
    m.column_mean()
}

pub fn summarize(x: impl Tokens) -> GaussianSummary {
    let m = x.matrix();
    let n = m.ncols() as f64;
    let mu = m.column_mean();
    let mut factor = m.clone();
    let inv_sqrt_n = 1.0 / n.sqrt();
    for mut col in factor.column_iter_mut() {
        col -= &mu;
        col *= inv_sqrt_n;
    }
    let trace_sigma = factor.norm_squared();
    GaussianSummary {
        mu,
        factor,
        trace_sigma,
    }
}

fn checked_mean_norm(mu: &DVector<f64>) -> Result<f64> {
    let norm = mu.norm();
    if !(norm > MEAN_NORM_FLOOR) {
        return Err(Error::DegenerateMean {
            norm,
            floor: MEAN_NORM_FLOOR,
        });
    }
    Ok(norm)
}

/// Divides every token by `‖μ(X)‖₂`, giving a list whose mean has unit norm.
pub fn normalize_list(x: &TokenMatrix) -> Result<TokenMatrix> {
    let norm = checked_mean_norm(&mean_pool(x))?;
    TokenMatrix::new(x.text_id, x.values() / norm)
}

/// Mean squared distance of the columns to their mean.
pub fn spread(m: impl Tokens) -> f64 {
    let m = m.matrix();
    let mu = m.column_mean();
    let total: f64 = m.column_iter().map(|c| (c - &mu).norm_squared()).sum();
    total / m.ncols() as f64
}

/// `spread(X) / ‖μ(X)‖²`.
pub fn concentration(x: impl Tokens) -> Result<f64> {
    let m = x.matrix();
    let norm = checked_mean_norm(&m.column_mean())?;
    Ok(spread(m) / (norm * norm))
}

/// Mean cosine over all ordered token pairs, diagonal included.
///
/// Equals `‖Σ_j x_j/‖x_j‖‖² / n²`.
pub fn avg_pairwise_cosine(x: impl Tokens) -> Result<f64> {
    let m = x.matrix();
    let mut sum = DVector::zeros(m.nrows());
    for (j, col) in m.column_iter().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::UndefinedRatio(format!("token {j} has zero norm")));
        }
        sum += col / norm;
    }
    let n = m.ncols() as f64;
    Ok((sum.norm_squared() / (n * n)).clamp(-1.0, 1.0))
}

/// Mean cosine over unordered distinct pairs `j < k`.
pub fn avg_distinct_pair_cosine(x: impl Tokens) -> Result<f64> {
    let m = x.matrix();
    let n = m.ncols();
    if n < 2 {
        return Err(Error::UndefinedDimension(n));
    }
    let all = avg_pairwise_cosine(m)?;
    let nf = n as f64;
    // n² · all = n + 2 · Σ_{j<k} cos
    Ok((all * nf * nf - nf) / (nf * (nf - 1.0)))
}
