//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold under which negative eigenvalues count as rounding.
pub const EIGEN_FLOOR_REL: f64 = 1e-10;

pub fn ensure_finite(what: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} has non-finite entries")))
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clamps slightly negative eigenvalues to zero.
///
/// `scale` is the magnitude the floor is relative to (typically a trace).
pub fn floor_eigenvalues(values: &mut [f64], scale: f64, what: &str) -> Result<()> {
    let floor = -EIGEN_FLOOR_REL * scale.abs();
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < floor {
                return Err(Error::Numeric(format!(
                    "{what} has eigenvalue {v:e} below the PSD floor {floor:e}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Eigendecomposition of a symmetric PSD matrix with the rounding floor applied.
pub fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    ensure_finite(what, m)?;
    let sym = symmetrize(m);
    let trace = sym.trace();
    let mut eig = SymmetricEigen::new(sym);
    floor_eigenvalues(eig.eigenvalues.as_mut_slice(), trace, what)?;
    Ok(eig)
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m, what)?;
    let roots = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().sum()
}

/// `||w_o * w_v||_op` without forming the `d x d` product.
///
/// With `w_vᵀ = Q R` (thin QR), `w_o w_v = (w_o Rᵀ) Qᵀ` and `Q` has orthonormal
/// columns, so the operator norm equals that of the `d x k` matrix `w_o Rᵀ`.
pub fn product_operator_norm(w_o: &DMatrix<f64>, w_v: &DMatrix<f64>) -> f64 {
    if w_v.nrows() >= w_v.ncols() {
        return operator_norm(&(w_o * w_v));
    }
    let qr = w_v.transpose().qr();
    let r = qr.r();
    operator_norm(&(w_o * r.transpose()))
}
