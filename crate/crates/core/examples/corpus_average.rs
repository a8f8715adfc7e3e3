//! Average SOCM over every pair of a sampled synthetic corpus.
//!
//!     cargo run --release --example corpus_average

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use socm::tensor_io::TokenMatrix;
use socm::{average_socm, sample_pairs};

/// Texts share one dominant direction; `noise` controls how far tokens stray from it.
fn corpus(texts: usize, noise: f64, seed: u64) -> Vec<TokenMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 32;
    let common = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    (0..texts as u32)
        .map(|id| {
            let n = rng.random_range(4..16);
            let mut x = DMatrix::from_fn(d, n, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
            for mut col in x.column_iter_mut() {
                col += &common;
            }
            TokenMatrix::new(id, x).unwrap()
        })
        .collect()
}

fn main() -> socm::Result<()> {
    let pairs = sample_pairs(300, 100, 0)?;
    println!("{} texts sampled, {} pairs", pairs.sampled.len(), pairs.len());
    for noise in [0.1, 0.5, 1.0, 3.0] {
        let dump = corpus(300, noise, 1);
        let (report, _) = average_socm(&dump, &pairs, &format!("noise {noise}"))?;
        println!(
            "{:>10}: mean socm {:.4}  d_mu {:.4}  d_sigma {:.4}  clamped {}",
            report.model_label,
            report.mean_socm.unwrap_or(f64::NAN),
            report.mean_d_mu.unwrap_or(f64::NAN),
            report.mean_d_sigma.unwrap_or(f64::NAN),
            report.clamped_count
        );
    }
    Ok(())
}
