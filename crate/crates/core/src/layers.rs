//! Per-layer concentration diagnostics from layer dumps.
//!
//! For one layer and one text, with `Y = H + attn_out`:
//!
//! - `λ = ‖W_o W_v‖²_op · ‖P A‖²_F / (n - 1)`, `P = I - 11ᵀ/n`, averaged over heads,
//! - `r = S(H) / ‖μ(Y)‖²`,
//! - `C = concentration(X_out) / concentration(Y)`,
//! - `concentration(X_out)` and the mean pairwise cosine of `X_out`.
//!
//! Texts are weighted equally within a layer. Texts whose quantities are
//! undefined (degenerate mean, zero spread, zero-norm token) are skipped
//! and counted.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::stats::{avg_pairwise_cosine, concentration, spread, Tokens, MEAN_NORM_FLOOR};
use crate::tensor_io::{LayerDumpRecord, ROW_SUM_TOL};

pub use crate::linalg::operator_norm;

/// `‖P A‖²_F`: squared Frobenius norm of `A` with its mean row removed.
fn centered_frobenius_sq(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows() as f64;
    let mean_row = a.row_sum() / n;
    a.row_iter().map(|row| (row - &mean_row).norm_squared()).sum()
}

fn check_attention(a: &DMatrix<f64>) -> Result<usize> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("attention is {}x{}", n, a.ncols())));
    }
    if n < 2 {
        return Err(Error::UndefinedDimension(n));
    }
    for (i, row) in a.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Validation(format!("attention row {i} sums to {sum}")));
        }
    }
    Ok(n)
}

/// `λ` given the operator norm of the head's effective projection.
pub fn lambda_from_norm(a: &DMatrix<f64>, w_ov_norm: f64) -> Result<f64> {
    let n = check_attention(a)?;
    Ok(w_ov_norm * w_ov_norm * centered_frobenius_sq(a) / (n - 1) as f64)
}

/// `λ` for one head with row-stochastic attention `a` and `d x d` map `w_ov`.
pub fn lambda_head(a: &DMatrix<f64>, w_ov: &DMatrix<f64>) -> Result<f64> {
    lambda_from_norm(a, operator_norm(w_ov))
}

/// `S(H) / ‖μ(Y)‖²`.
pub fn r_ratio(h: impl Tokens, y: impl Tokens) -> Result<f64> {
    let mu = y.matrix().column_mean();
    let norm = mu.norm();
    if !(norm > MEAN_NORM_FLOOR) {
        return Err(Error::DegenerateMean {
            norm,
            floor: MEAN_NORM_FLOOR,
        });
    }
    Ok(spread(h) / (norm * norm))
}

/// `concentration(X) / concentration(Y)`.
pub fn c_ratio(y: impl Tokens, x: impl Tokens) -> Result<f64> {
    let cy = concentration(&y)?;
    if cy == 0.0 {
        return Err(Error::UndefinedRatio("spread(Y) = 0".into()));
    }
    Ok(concentration(&x)? / cy)
}

/// Diagnostics for one text at one layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextDiagnostics {
    pub text_id: u32,
    pub layer_index: u32,
    pub lambda_per_head: Vec<f64>,
    pub lambda: f64,
    pub r: f64,
    pub c: f64,
    pub concentration: f64,
    pub cosine: f64,
}

pub fn text_diagnostics(record: &LayerDumpRecord) -> Result<TextDiagnostics> {
    let lambda_per_head = record
        .heads
        .iter()
        .map(|head| {
            let norm = linalg::product_operator_norm(&head.w_o, &head.w_v);
            lambda_from_norm(&head.attention, norm)
        })
        .collect::<Result<Vec<_>>>()?;
    if lambda_per_head.is_empty() {
        return Err(Error::Validation("layer record has no heads".into()));
    }
    let lambda = lambda_per_head.iter().sum::<f64>() / lambda_per_head.len() as f64;
    let y = record.residual();
    Ok(TextDiagnostics {
        text_id: record.text_id,
        layer_index: record.layer_index,
        lambda,
        lambda_per_head,
        r: r_ratio(&record.h, &y)?,
        c: c_ratio(&y, &record.x_out)?,
        concentration: concentration(&record.x_out)?,
        cosine: avg_pairwise_cosine(&record.x_out)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    #[serde(rename = "layer")]
    pub layer_index: u32,
    pub avg_lambda: f64,
    pub avg_r: f64,
    pub avg_c: f64,
    pub avg_concentration: f64,
    pub avg_cosine: f64,
    pub text_count: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    /// One entry per layer with at least one usable text, ordered by layer.
    pub profiles: Vec<LayerProfile>,
    /// Layers where every text was skipped, with their skip counts.
    pub empty_layers: Vec<(u32, usize)>,
    /// Per-text values that went into the averages.
    pub texts: Vec<TextDiagnostics>,
}

#[derive(Default)]
struct Accum {
    lambda: f64,
    r: f64,
    c: f64,
    concentration: f64,
    cosine: f64,
    used: usize,
    skipped: usize,
}

/// Per-layer averages over texts.
///
/// Per-text work runs in parallel; the reduction walks results in input order.
pub fn layer_profiles(records: &[LayerDumpRecord]) -> Result<LayerReport> {
    if records.is_empty() {
        return Err(Error::Empty("no layer records".into()));
    }
    let results: Vec<Result<TextDiagnostics>> = records.par_iter().map(text_diagnostics).collect();

    let mut layers: BTreeMap<u32, Accum> = BTreeMap::new();
    let mut texts = Vec::new();
    for (record, result) in records.iter().zip(results) {
        let acc = layers.entry(record.layer_index).or_default();
        match result {
            Ok(t) => {
                acc.lambda += t.lambda;
                acc.r += t.r;
                acc.c += t.c;
                acc.concentration += t.concentration;
                acc.cosine += t.cosine;
                acc.used += 1;
                texts.push(t);
            }
            Err(e) if e.is_degenerate() => acc.skipped += 1,
            Err(e) => return Err(e),
        }
    }

    let mut profiles = Vec::new();
    let mut empty_layers = Vec::new();
    for (layer_index, acc) in layers {
        if acc.used == 0 {
            empty_layers.push((layer_index, acc.skipped));
            continue;
        }
        let k = acc.used as f64;
        profiles.push(LayerProfile {
            layer_index,
            avg_lambda: acc.lambda / k,
            avg_r: acc.r / k,
            avg_c: acc.c / k,
            avg_concentration: acc.concentration / k,
            avg_cosine: acc.cosine / k,
            text_count: acc.used,
            skipped: acc.skipped,
        });
    }
    Ok(LayerReport {
        profiles,
        empty_layers,
        texts,
    })
}

/// Writes `layer,avg_lambda,avg_r,avg_c,avg_concentration,avg_cosine,text_count,skipped`.
pub fn write_profiles_csv<W: Write>(profiles: &[LayerProfile], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "layer",
        "avg_lambda",
        "avg_r",
        "avg_c",
        "avg_concentration",
        "avg_cosine",
        "text_count",
        "skipped",
    ])?;
    for p in profiles {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::HeadRecord;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, n, 1.0 / n as f64)
    }

    fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.01..1.0));
        for mut row in a.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        a
    }

    // Dense oracle: explicit centering matrix.
    fn lambda_oracle(a: &DMatrix<f64>, w_ov: &DMatrix<f64>) -> f64 {
        let n = a.nrows();
        let p = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let pa = &p * a;
        let op = w_ov.singular_values().max();
        op * op * pa.norm_squared() / (n - 1) as f64
    }

    fn record(
        text_id: u32,
        layer: u32,
        h: DMatrix<f64>,
        attention: DMatrix<f64>,
        rng: &mut ChaCha8Rng,
    ) -> LayerDumpRecord {
        let d = h.nrows();
        let w_v = DMatrix::from_fn(2, d, |_, _| rng.random_range(-0.3..0.3));
        let w_o = DMatrix::from_fn(d, 2, |_, _| rng.random_range(-0.3..0.3));
        let attn_out = &w_o * &w_v * &h * attention.transpose();
        let y = &h + &attn_out;
        let x_out = y.map(|v| 1.5 * v + 0.1);
        LayerDumpRecord {
            text_id,
            layer_index: layer,
            h,
            attn_out,
            x_out,
            heads: vec![HeadRecord { attention, w_v, w_o }],
        }
    }

    fn gaussian_h(d: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(d, n, |i, _| if i == 0 { 3.0 } else { 0.0 } + rng.random_range(-1.0..1.0))
    }

    #[test]
    fn lambda_examples() {
        let id = DMatrix::identity(4, 4);
        assert!(lambda_head(&uniform(5), &id).unwrap().abs() < 1e-15);
        assert_relative_eq!(lambda_head(&DMatrix::identity(6, 6), &DMatrix::identity(6, 6)).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(lambda_head(&uniform(1), &id), Err(Error::UndefinedDimension(1))));
        let mut bad = uniform(3);
        bad[(0, 0)] += 0.1;
        assert!(matches!(lambda_head(&bad, &id), Err(Error::Validation(_))));
    }

    #[test]
    fn lambda_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 2..8 {
            let a = random_stochastic(n, &mut rng);
            let w = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            assert_relative_eq!(lambda_head(&a, &w).unwrap(), lambda_oracle(&a, &w), max_relative = 1e-10);
        }
    }

    #[test]
    fn r_examples() {
        let same = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(r_ratio(&same, &same).unwrap(), 0.0);
        let h = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let y = DMatrix::from_column_slice(2, 2, &[2.0, 0.0, 2.0, 0.0]);
        assert_relative_eq!(r_ratio(&h, &y).unwrap(), 0.25);
        assert!(matches!(r_ratio(&y, &h), Err(Error::DegenerateMean { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let h = gaussian_h(4, 5, &mut rng);
        let y = gaussian_h(4, 5, &mut rng);
        let mu = crate::stats::mean_pool(&y);
        assert_relative_eq!(r_ratio(&h, &y).unwrap(), spread(&h) / mu.norm_squared(), max_relative = 1e-12);
    }

    #[test]
    fn c_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y = gaussian_h(4, 5, &mut rng);
        assert_relative_eq!(c_ratio(&y, &y).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(c_ratio(&y, &(&y * 2.0)).unwrap(), 1.0, epsilon = 1e-12);
        let x = gaussian_h(4, 5, &mut rng);
        let expected = concentration(&x).unwrap() / concentration(&y).unwrap();
        assert_relative_eq!(c_ratio(&y, &x).unwrap(), expected, max_relative = 1e-12);
        let flat = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(c_ratio(&flat, &x), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn uniform_attention_profile_has_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let rec = record(0, 0, gaussian_h(4, 5, &mut rng), uniform(5), &mut rng);
        let report = layer_profiles(&[rec]).unwrap();
        assert_eq!(report.profiles.len(), 1);
        assert!(report.profiles[0].avg_lambda.abs() < 1e-15);
        assert_eq!(report.profiles[0].text_count, 1);
    }

    #[test]
    fn duplicate_texts_do_not_change_averages() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let a = random_stochastic(5, &mut rng);
        let rec = record(0, 2, gaussian_h(4, 5, &mut rng), a, &mut rng);
        let one = layer_profiles(std::slice::from_ref(&rec)).unwrap().profiles[0].clone();
        let two = layer_profiles(&[rec.clone(), rec]).unwrap().profiles[0].clone();
        assert_relative_eq!(one.avg_lambda, two.avg_lambda, max_relative = 1e-14);
        assert_relative_eq!(one.avg_r, two.avg_r, max_relative = 1e-14);
        assert_relative_eq!(one.avg_c, two.avg_c, max_relative = 1e-14);
        assert_relative_eq!(one.avg_cosine, two.avg_cosine, max_relative = 1e-14);
        assert_eq!(two.text_count, 2);
    }

    #[test]
    fn profile_matches_per_op_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mut records = Vec::new();
        for layer in 0..3u32 {
            for text in 0..4u32 {
                let a = random_stochastic(6, &mut rng);
                records.push(record(text, layer, gaussian_h(5, 6, &mut rng), a, &mut rng));
            }
        }
        let report = layer_profiles(&records).unwrap();
        assert_eq!(report.profiles.len(), 3);
        for p in &report.profiles {
            let group: Vec<_> = records.iter().filter(|r| r.layer_index == p.layer_index).collect();
            let k = group.len() as f64;
            let lam: f64 = group
                .iter()
                .map(|r| lambda_oracle(&r.heads[0].attention, &r.heads[0].w_ov()))
                .sum::<f64>()
                / k;
            let rr: f64 = group.iter().map(|r| r_ratio(&r.h, &r.residual()).unwrap()).sum::<f64>() / k;
            let cc: f64 = group.iter().map(|r| c_ratio(&r.residual(), &r.x_out).unwrap()).sum::<f64>() / k;
            assert_relative_eq!(p.avg_lambda, lam, max_relative = 1e-10);
            assert_relative_eq!(p.avg_r, rr, max_relative = 1e-12);
            assert_relative_eq!(p.avg_c, cc, max_relative = 1e-12);
        }
    }

    #[test]
    fn multi_head_lambda_is_head_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let mut rec = record(0, 0, gaussian_h(4, 5, &mut rng), random_stochastic(5, &mut rng), &mut rng);
        rec.heads.push(HeadRecord {
            attention: uniform(5),
            w_v: DMatrix::identity(2, 4),
            w_o: DMatrix::identity(4, 2),
        });
        let t = text_diagnostics(&rec).unwrap();
        assert_eq!(t.lambda_per_head.len(), 2);
        assert!(t.lambda_per_head[1].abs() < 1e-15);
        assert_relative_eq!(t.lambda, t.lambda_per_head[0] / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn degenerate_texts_are_skipped_and_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let good = record(0, 1, gaussian_h(4, 5, &mut rng), uniform(5), &mut rng);
        let mut bad = good.clone();
        bad.text_id = 1;
        // zero-mean residual
        bad.h = DMatrix::from_fn(4, 5, |i, j| if j % 2 == 0 { i as f64 } else { -(i as f64) });
        bad.h.column_mut(4).fill(0.0);
        bad.attn_out = DMatrix::zeros(4, 5);
        let report = layer_profiles(&[good, bad]).unwrap();
        let p = &report.profiles[0];
        assert_eq!(p.text_count + p.skipped, 2);
        assert_eq!(p.skipped, 1);
        assert!(layer_profiles(&[]).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let p = LayerProfile {
            layer_index: 3,
            avg_lambda: 0.5,
            avg_r: 0.25,
            avg_c: 1.0,
            avg_concentration: 0.125,
            avg_cosine: 0.75,
            text_count: 2,
            skipped: 1,
        };
        let mut buf = Vec::new();
        write_profiles_csv(&[p], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "layer,avg_lambda,avg_r,avg_c,avg_concentration,avg_cosine,text_count,skipped\n3,0.5,0.25,1.0,0.125,0.75,2,1\n"
        );
    }

    proptest! {
        #[test]
        fn lambda_nonnegative_and_r_scale_invariant(seed in any::<u64>(), n in 2usize..7, alpha in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rec = record(0, 0, gaussian_h(3, n, &mut rng), random_stochastic(n, &mut rng), &mut rng);
            let t = text_diagnostics(&rec).unwrap();
            prop_assert!(t.lambda >= 0.0);
            let y = rec.residual();
            let r_scaled = r_ratio(&(&rec.h * alpha), &(&y * alpha)).unwrap();
            prop_assert!((r_scaled - t.r).abs() <= 1e-9 * t.r.max(1e-12));
            let c_scaled = concentration(&(&rec.x_out * alpha)).unwrap();
            prop_assert!((c_scaled - t.concentration).abs() <= 1e-9 * t.concentration.max(1e-12));
        }
    }
}
