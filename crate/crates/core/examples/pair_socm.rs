//! SOCM for a few hand-built pairs of token lists.
//!
//!     cargo run --example pair_socm

use socm::tensor_io::TokenMatrix;
use socm::{socm_pair, w2_gaussian_squared};

fn list(id: u32, cols: &[[f64; 3]]) -> TokenMatrix {
    let cols: Vec<Vec<f64>> = cols.iter().map(|c| c.to_vec()).collect();
    TokenMatrix::from_columns(id, &cols).unwrap()
}

fn main() -> socm::Result<()> {
    // same mean direction, token clouds spread along different axes:
    // the means barely differ but the texts do
    let a = list(0, &[[1.0, 0.9, 0.0], [1.0, -0.9, 0.0]]);
    let b = list(1, &[[1.0, 0.0, 0.9], [1.0, 0.0, -0.9]]);
    // tight clusters around different directions: the means carry the difference
    let c = list(2, &[[1.0, 0.05, 0.0], [1.0, -0.05, 0.0]]);
    let d = list(3, &[[0.0, 1.0, 0.05], [0.0, 1.0, -0.05]]);

    for (name, x, y) in [("spread apart, same mean", &a, &b), ("tight, different means", &c, &d), ("identical", &a, &a)] {
        let s = socm_pair(x, y)?;
        println!(
            "{name:>24}: d_mu {:.4}  d_sigma {:.4}  socm {:.4}{}",
            s.d_mu,
            s.d_sigma,
            s.socm,
            if s.clamped { "  (clamped)" } else { "" }
        );
    }

    // d_mu + d_sigma is a quarter of the Gaussian 2-Wasserstein distance
    let (ga, gb) = (socm::metric::normalized_summary(&a)?, socm::metric::normalized_summary(&b)?);
    let s = socm_pair(&a, &b)?;
    println!("W2^2/4 = {:.6}, d_mu + d_sigma = {:.6}", w2_gaussian_squared(&ga, &gb)? / 4.0, s.d_mu + s.d_sigma_raw);
    Ok(())
}
