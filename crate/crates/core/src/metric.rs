//! The SOCM metric and its two ingredients.
//!
//! For unit-mean Gaussians `N(μ₁, Σ₁)`, `N(μ₂, Σ₂)`:
//!
//! ```text
//! d_mu    = ‖μ₁ - μ₂‖² / 4
//! d_sigma = tr(Σ₁ + Σ₂ - 2 (Σ₁^½ Σ₂ Σ₁^½)^½) / 4
//! SOCM    = (1 - d_mu) · d_sigma
//! ```
//!
//! `d_mu + d_sigma` is a quarter of the squared 2-Wasserstein distance between
//! the two Gaussians. The cross term of `d_sigma` is evaluated from the factors
//! `Σᵢ = Bᵢ Bᵢᵀ`: the eigenvalues of `Σ₁Σ₂` are the squared singular values of
//! `B₁ᵀB₂`, so `tr (Σ₁^½ Σ₂ Σ₁^½)^½ = ‖B₁ᵀB₂‖_*`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::stats::{normalize_list, summarize, GaussianSummary};
use crate::tensor_io::TokenMatrix;

/// Tolerance on `‖μ‖ = 1` for [`d_mu`] inputs.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Relative asymmetry accepted by [`bures_wasserstein_dense`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Per-pair statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub d_mu: f64,
    /// `d_sigma_raw` clamped to `[0, 1]`.
    pub d_sigma: f64,
    pub socm: f64,
    pub d_sigma_raw: f64,
    /// Set when `d_sigma_raw > 1`, i.e. the traces broke the `tr Σ ≤ 2` bound.
    pub clamped: bool,
    /// `tr Σ₁ + tr Σ₂`.
    pub trace_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DSigma {
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
    pub trace_sum: f64,
}

fn check_unit(name: &str, v: &DVector<f64>) -> Result<()> {
    let norm = v.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::Precondition(format!(
            "{name} must have unit norm, got {norm}"
        )));
    }
    Ok(())
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Scaled squared distance between unit mean vectors, in `[0, 1]`.
pub fn d_mu(mu1: &DVector<f64>, mu2: &DVector<f64>) -> Result<f64> {
    check_same_dim(mu1.len(), mu2.len())?;
    check_unit("mu1", mu1)?;
    check_unit("mu2", mu2)?;
    Ok(((mu1 - mu2).norm_squared() / 4.0).clamp(0.0, 1.0))
}

fn check_symmetric(name: &str, s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Shape(format!("{name} is not square")));
    }
    let scale = s.abs().max().max(1.0);
    let asym = (s - s.transpose()).abs().max();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Precondition(format!(
            "{name} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Unscaled squared Bures–Wasserstein distance between dense PSD matrices.
///
/// Uses symmetric eigendecompositions: `Σ₁^½` first, then the spectrum of
/// `Σ₁^½ Σ₂ Σ₁^½`. This is the reference path for [`d_sigma`].
pub fn bures_wasserstein_dense(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    linalg::ensure_finite("S1", s1)?;
    linalg::ensure_finite("S2", s2)?;
    check_symmetric("S1", s1)?;
    check_symmetric("S2", s2)?;
    check_same_dim(s1.nrows(), s2.nrows())?;

    let root = linalg::psd_sqrt(s1, "S1")?;
    let s2 = linalg::symmetrize(s2);
    linalg::psd_eigen(&s2, "S2")?;
    let inner = &root * &s2 * &root;
    let eig = linalg::psd_eigen(&inner, "S1^1/2 S2 S1^1/2")?;
    let cross: f64 = eig.eigenvalues.iter().map(|v| v.sqrt()).sum();
    Ok((s1.trace() + s2.trace() - 2.0 * cross).max(0.0))
}

/// `tr (Σ₁^½ Σ₂ Σ₁^½)^½` from the factors.
fn cross_term(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<f64> {
    let gram = g1.factor.transpose() * &g2.factor;
    linalg::ensure_finite("B1ᵀB2", &gram)?;
    Ok(linalg::nuclear_norm(&gram))
}

fn unscaled_bures(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<(f64, f64)> {
    check_same_dim(g1.dim(), g2.dim())?;
    let trace_sum = g1.trace_sigma + g2.trace_sigma;
    if !trace_sum.is_finite() {
        return Err(Error::Numeric("non-finite covariance trace".into()));
    }
    let cross = cross_term(g1, g2)?;
    Ok(((trace_sum - 2.0 * cross).max(0.0), trace_sum))
}

/// Scaled Bures–Wasserstein distance between two summaries (low-rank path).
///
/// Values above 1 are clamped and flagged; the raw value is kept.
pub fn d_sigma(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<DSigma> {
    let (bw, trace_sum) = unscaled_bures(g1, g2)?;
    let raw = bw / 4.0;
    Ok(DSigma {
        value: raw.min(1.0),
        raw,
        clamped: raw > 1.0,
        trace_sum,
    })
}

/// `(1 - d_mu) · d_sigma`.
pub fn socm(d_mu: f64, d_sigma: f64) -> Result<f64> {
    for (name, v) in [("d_mu", d_mu), ("d_sigma", d_sigma)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Precondition(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    Ok((1.0 - d_mu) * d_sigma)
}

/// Squared 2-Wasserstein distance between `N(μ₁, Σ₁)` and `N(μ₂, Σ₂)`.
pub fn w2_gaussian_squared(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<f64> {
    let (bw, _) = unscaled_bures(g1, g2)?;
    Ok((&g1.mu - &g2.mu).norm_squared() + bw)
}

/// Pair statistics from summaries of already-normalized lists.
pub fn pair_stats(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<PairStats> {
    let dm = d_mu(&g1.mu, &g2.mu)?;
    let ds = d_sigma(g1, g2)?;
    Ok(PairStats {
        d_mu: dm,
        d_sigma: ds.value,
        socm: socm(dm, ds.value)?,
        d_sigma_raw: ds.raw,
        clamped: ds.clamped,
        trace_sum: ds.trace_sum,
    })
}

/// Summary of the normalized list; the per-text half of [`socm_pair`].
pub fn normalized_summary(x: &TokenMatrix) -> Result<GaussianSummary> {
    Ok(summarize(&normalize_list(x)?))
}

pub fn socm_pair(x1: &TokenMatrix, x2: &TokenMatrix) -> Result<PairStats> {
    check_same_dim(x1.dim(), x2.dim())?;
    pair_stats(&normalized_summary(x1)?, &normalized_summary(x2)?)
}
