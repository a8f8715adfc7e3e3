//! Per-layer diagnostics for a tiny synthetic stack.
//!
//! Each layer mixes tokens through one attention head, adds the residual and
//! applies layer norm. Later layers use flatter attention, so λ shrinks.
//!
//!     cargo run --example layer_profile

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use socm::layers::{layer_profiles, write_profiles_csv};
use socm::tensor_io::{HeadRecord, LayerDumpRecord};

fn softmax_rows(logits: DMatrix<f64>) -> DMatrix<f64> {
    let mut a = logits;
    for mut row in a.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
    a
}

fn layer_norm(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / col.len() as f64).sqrt().max(1e-12);
        col /= sd;
    }
    out
}

fn main() -> socm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, n, hd, layers) = (16, 10, 4, 6);
    let mut records = Vec::new();
    for text in 0..8u32 {
        let mut h = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        h.row_mut(0).add_scalar_mut(1.0);
        for layer in 0..layers {
            let temperature = 1.0 / (1.0 + layer as f64);
            let logits = DMatrix::from_fn(n, n, |_, _| 2.0 * temperature * rng.sample::<f64, _>(StandardNormal));
            let attention = softmax_rows(logits);
            let s = 0.5 / (d as f64).sqrt();
            let w_v = DMatrix::from_fn(hd, d, |_, _| s * rng.sample::<f64, _>(StandardNormal));
            let w_o = DMatrix::from_fn(d, hd, |_, _| s * rng.sample::<f64, _>(StandardNormal));
            let attn_out = &w_o * &w_v * &h * attention.transpose();
            let x_out = layer_norm(&(&h + &attn_out));
            records.push(LayerDumpRecord {
                text_id: text,
                layer_index: layer,
                h: h.clone(),
                attn_out,
                x_out: x_out.clone(),
                heads: vec![HeadRecord { attention, w_v, w_o }],
            });
            h = x_out;
        }
    }
    let report = layer_profiles(&records)?;
    write_profiles_csv(&report.profiles, std::io::stdout().lock())?;
    Ok(())
}
