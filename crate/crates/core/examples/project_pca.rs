//! Two-dimensional uncentered PCA view of two texts and their means.
//!
//!     cargo run --example project_pca

use socm::harness::{pca_project_uncentered, write_projection_csv};
use socm::tensor_io::TokenMatrix;

fn main() -> socm::Result<()> {
    // both texts sit around the same dominant direction but spread differently
    let a = TokenMatrix::from_columns(0, &[vec![2.0, 0.6, 0.0], vec![2.0, -0.6, 0.0], vec![2.1, 0.0, 0.1]])?;
    let b = TokenMatrix::from_columns(1, &[vec![2.0, 0.0, 0.7], vec![2.0, 0.0, -0.7], vec![1.9, 0.1, 0.0]])?;
    let p = pca_project_uncentered(&a, &b)?;
    eprintln!("singular values {:?}", p.singular_values);
    write_projection_csv(&p, std::io::stdout().lock())
}
