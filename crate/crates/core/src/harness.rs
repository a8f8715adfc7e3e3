//! Corpus-scale pipelines over token dumps.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{normalized_summary, pair_stats, PairStats};
use crate::stats::{mean_pool, GaussianSummary};
use crate::tensor_io::TokenMatrix;

pub const HISTOGRAM_BINS: usize = 100;

/// All pairs `(i, j)`, `i < j`, over a seeded sample of text indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIndex {
    pub pairs: Vec<(usize, usize)>,
    /// Sampled text indices, ascending.
    pub sampled: Vec<usize>,
    pub sample_seed: u64,
    pub text_count: usize,
}

impl PairIndex {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every pair over all `text_count` texts.
    pub fn all(text_count: usize) -> Self {
        let sampled: Vec<usize> = (0..text_count).collect();
        PairIndex {
            pairs: lexicographic_pairs(&sampled),
            sampled,
            sample_seed: 0,
            text_count,
        }
    }
}

fn lexicographic_pairs(indices: &[usize]) -> Vec<(usize, usize)> {
    let k = indices.len();
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Samples `sample_size` of `text_count` indices without replacement, then
/// enumerates all pairs among them in lexicographic order.
pub fn sample_pairs(text_count: usize, sample_size: usize, seed: u64) -> Result<PairIndex> {
    if sample_size > text_count {
        return Err(Error::Config(format!(
            "sample size {sample_size} exceeds text count {text_count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled = rand::seq::index::sample(&mut rng, text_count, sample_size).into_vec();
    sampled.sort_unstable();
    Ok(PairIndex {
        pairs: lexicographic_pairs(&sampled),
        sampled,
        sample_seed: seed,
        text_count,
    })
}

/// One evaluated pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub stats: PairStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub model_label: String,
    pub text_count: usize,
    pub sample_size: usize,
    pub sample_seed: u64,
    pub pair_count: usize,
    pub used_pairs: usize,
    pub skipped_pairs: usize,
    /// Texts whose mean fell below the normalization floor.
    pub degenerate_texts: Vec<usize>,
    pub mean_socm: Option<f64>,
    pub mean_d_mu: Option<f64>,
    pub mean_d_sigma: Option<f64>,
    pub clamped_count: usize,
    /// Counts of SOCM over `[0, 1]` in 100 equal bins; 1.0 falls in the last bin.
    pub histogram: Vec<u64>,
}

fn histogram_bin(v: f64) -> usize {
    ((v * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

/// Averages SOCM over the given pairs.
///
/// Texts are normalized and summarized once; pairs touching a degenerate text
/// are skipped and counted. Pair results are reduced in pair order, so the
/// report is identical for any thread count.
pub fn average_socm(
    dump: &[TokenMatrix],
    pairs: &PairIndex,
    model_label: &str,
) -> Result<(CorpusReport, Vec<PairRecord>)> {
    for &(i, j) in &pairs.pairs {
        for idx in [i, j] {
            if idx >= dump.len() {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: dump.len(),
                });
            }
        }
    }

    let mut needed: Vec<usize> = pairs.pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    needed.sort_unstable();
    needed.dedup();
    let computed: Vec<(usize, Result<GaussianSummary>)> = needed
        .par_iter()
        .map(|&i| (i, normalized_summary(&dump[i])))
        .collect();
    let mut summaries: BTreeMap<usize, GaussianSummary> = BTreeMap::new();
    let mut degenerate_texts = Vec::new();
    for (i, res) in computed {
        match res {
            Ok(s) => {
                summaries.insert(i, s);
            }
            Err(e) if e.is_degenerate() => degenerate_texts.push(i),
            Err(e) => return Err(e),
        }
    }

    let results: Vec<Result<Option<PairRecord>>> = pairs
        .pairs
        .par_iter()
        .map(|&(i, j)| match (summaries.get(&i), summaries.get(&j)) {
            (Some(a), Some(b)) => Ok(Some(PairRecord {
                i,
                j,
                stats: pair_stats(a, b)?,
            })),
            _ => Ok(None),
        })
        .collect();

    let mut records = Vec::with_capacity(pairs.len());
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    let (mut sum_socm, mut sum_mu, mut sum_sigma) = (0.0, 0.0, 0.0);
    let mut clamped_count = 0;
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(rec) => {
                sum_socm += rec.stats.socm;
                sum_mu += rec.stats.d_mu;
                sum_sigma += rec.stats.d_sigma;
                clamped_count += rec.stats.clamped as usize;
                histogram[histogram_bin(rec.stats.socm)] += 1;
                records.push(rec);
            }
            None => skipped += 1,
        }
    }
    let used = records.len();
    let mean = |s: f64| (used > 0).then(|| s / used as f64);
    let report = CorpusReport {
        model_label: model_label.to_string(),
        text_count: pairs.text_count,
        sample_size: pairs.sampled.len(),
        sample_seed: pairs.sample_seed,
        pair_count: pairs.len(),
        used_pairs: used,
        skipped_pairs: skipped,
        degenerate_texts,
        mean_socm: mean(sum_socm),
        mean_d_mu: mean(sum_mu),
        mean_d_sigma: mean(sum_sigma),
        clamped_count,
        histogram,
    };
    Ok((report, records))
}

/// Writes `d_mu,d_sigma,socm,clamped`, one row per evaluated pair.
pub fn scatter_export<W: Write>(records: &[PairRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["d_mu", "d_sigma", "socm", "clamped"])?;
    for r in records {
        w.write_record(&[
            r.stats.d_mu.to_string(),
            r.stats.d_sigma.to_string(),
            r.stats.socm.to_string(),
            r.stats.clamped.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// rank correlation

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in correlation input".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
        .ok_or_else(|| Error::UndefinedCorrelation("constant sequence".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model_label: String,
    pub score: f64,
}

/// Reads a two-column `model_label,score` CSV with a header row.
pub fn read_scores<R: Read>(input: R) -> Result<Vec<ScoreRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: ScoreRow = row?;
        if !row.score.is_finite() {
            return Err(Error::Validation(format!("score for {} is not finite", row.model_label)));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub model_label: String,
    pub mean_socm: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// Joined rows, ordered by model label.
    pub rows: Vec<CorrelationRow>,
    pub rho: f64,
}

/// Joins corpus reports to downstream scores by model label and ranks them.
pub fn correlate(reports: &[CorpusReport], scores: &[ScoreRow]) -> Result<Correlation> {
    let mut by_label: BTreeMap<&str, f64> = BTreeMap::new();
    for s in scores {
        if by_label.insert(s.model_label.as_str(), s.score).is_some() {
            return Err(Error::Validation(format!("duplicate score for {}", s.model_label)));
        }
    }
    let mut rows = Vec::new();
    for rep in reports {
        let Some(&score) = by_label.get(rep.model_label.as_str()) else {
            return Err(Error::Validation(format!("no score for model {}", rep.model_label)));
        };
        let mean_socm = rep
            .mean_socm
            .ok_or_else(|| Error::Validation(format!("report for {} has no used pairs", rep.model_label)))?;
        rows.push(CorrelationRow {
            model_label: rep.model_label.clone(),
            mean_socm,
            score,
        });
    }
    rows.sort_by(|a, b| a.model_label.cmp(&b.model_label));
    if rows.windows(2).any(|w| w[0].model_label == w[1].model_label) {
        return Err(Error::Validation("duplicate model label among reports".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.mean_socm).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let rho = spearman(&xs, &ys)?;
    Ok(Correlation { rows, rho })
}

/// Writes `model_label,mean_socm,score,spearman_rho`; ρ repeats on every row.
pub fn write_correlation_csv<W: Write>(c: &Correlation, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model_label", "mean_socm", "score", "spearman_rho"])?;
    for r in &c.rows {
        w.write_record(&[
            r.model_label.clone(),
            r.mean_socm.to_string(),
            r.score.to_string(),
            c.rho.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// uncentered PCA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    /// `None` for a text's mean.
    pub token_id: Option<usize>,
    pub text_id: u32,
    pub pc1: f64,
    pub pc2: f64,
    pub is_mean: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Top two principal directions in `R^d`, unit norm (zero if the data has rank < 2 in `d = 1`).
    pub components: [DVector<f64>; 2],
    /// All singular values of the stacked token matrix, descending.
    pub singular_values: Vec<f64>,
    pub points: Vec<ProjectedPoint>,
}

/// Flips `v` so its largest-magnitude entry is positive.
fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Projects both texts' tokens and means onto the top two directions of the
/// stacked token matrix, without subtracting any mean first.
pub fn pca_project_uncentered(x1: &TokenMatrix, x2: &TokenMatrix) -> Result<Projection> {
    let d = x1.dim();
    if x2.dim() != d {
        return Err(Error::Shape(format!("dimension mismatch: {} vs {}", d, x2.dim())));
    }
    let total = x1.len() + x2.len();
    if total < 2 {
        return Err(Error::Validation("need at least two tokens".into()));
    }
    // rows = tokens
    let mut stacked = DMatrix::zeros(total, d);
    for (k, col) in x1.values().column_iter().chain(x2.values().column_iter()).enumerate() {
        stacked.row_mut(k).copy_from(&col.transpose());
    }
    if stacked.iter().all(|&v| v == 0.0) {
        return Err(Error::Numeric("rank-0 input".into()));
    }
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let component = |rank: usize| -> DVector<f64> {
        match order.get(rank) {
            Some(&k) => {
                let mut v = v_t.row(k).transpose();
                fix_sign(&mut v);
                v
            }
            None => DVector::zeros(d),
        }
    };
    let components = [component(0), component(1)];

    let mut points = Vec::with_capacity(total + 2);
    for x in [x1, x2] {
        for (j, col) in x.values().column_iter().enumerate() {
            points.push(ProjectedPoint {
                token_id: Some(j),
                text_id: x.text_id,
                pc1: col.dot(&components[0]),
                pc2: col.dot(&components[1]),
                is_mean: false,
            });
        }
        let mu = mean_pool(x);
        points.push(ProjectedPoint {
            token_id: None,
            text_id: x.text_id,
            pc1: mu.dot(&components[0]),
            pc2: mu.dot(&components[1]),
            is_mean: true,
        });
    }
    Ok(Projection {
        components,
        singular_values,
        points,
    })
}

/// Writes `token_id,text_id,pc1,pc2,is_mean`; mean rows leave `token_id` empty.
pub fn write_projection_csv<W: Write>(p: &Projection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["token_id", "text_id", "pc1", "pc2", "is_mean"])?;
    for pt in &p.points {
        w.write_record(&[
            pt.token_id.map(|t| t.to_string()).unwrap_or_default(),
            pt.text_id.to_string(),
            pt.pc1.to_string(),
            pt.pc2.to_string(),
            pt.is_mean.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::socm_pair;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_dump(texts: usize, d: usize, seed: u64) -> Vec<TokenMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..texts)
            .map(|t| {
                let n = rng.random_range(1..6);
                let m = DMatrix::from_fn(d, n, |i, _| 0.3 * (i as f64 + 1.0) + rng.random_range(-1.0..1.0));
                TokenMatrix::new(t as u32, m).unwrap()
            })
            .collect()
    }

    #[test]
    fn pair_counts() {
        assert_eq!(sample_pairs(1000, 1000, 0).unwrap().len(), 499_500);
        assert_eq!(sample_pairs(10, 2, 0).unwrap().len(), 1);
        assert_eq!(sample_pairs(10, 4, 0).unwrap().len(), 6);
        assert!(sample_pairs(3, 4, 0).is_err());
        assert_eq!(sample_pairs(5, 0, 0).unwrap().len(), 0);
    }

    #[test]
    fn sampled_pairs_are_ordered_and_unique() {
        let p = sample_pairs(50, 12, 9).unwrap();
        assert_eq!(p, sample_pairs(50, 12, 9).unwrap());
        assert!(p.pairs.iter().all(|&(i, j)| i < j && j < 50));
        assert!(p.pairs.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(p.sampled, sample_pairs(50, 12, 10).unwrap().sampled);
    }

    #[test]
    fn identical_texts_average_zero() {
        let x = random_dump(1, 4, 1).remove(0);
        let dump: Vec<_> = (0..4).map(|_| x.clone()).collect();
        let (rep, _) = average_socm(&dump, &PairIndex::all(4), "same").unwrap();
        assert!(rep.mean_socm.unwrap() < 1e-12);
        assert_eq!(rep.used_pairs, 6);
    }

    #[test]
    fn two_texts_match_single_pair() {
        let dump = random_dump(2, 5, 2);
        let (rep, recs) = average_socm(&dump, &PairIndex::all(2), "m").unwrap();
        let direct = socm_pair(&dump[0], &dump[1]).unwrap();
        assert_eq!(rep.mean_socm.unwrap(), direct.socm);
        assert_eq!(recs.len(), 1);
        assert_eq!(rep.histogram.iter().sum::<u64>(), 1);
    }

    #[test]
    fn parallel_average_matches_serial_oracle() {
        let dump = random_dump(30, 6, 3);
        let pairs = sample_pairs(30, 20, 4).unwrap();
        let (rep, _) = average_socm(&dump, &pairs, "m").unwrap();
        let mut sum = 0.0;
        for &(i, j) in &pairs.pairs {
            sum += socm_pair(&dump[i], &dump[j]).unwrap().socm;
        }
        assert_relative_eq!(rep.mean_socm.unwrap(), sum / pairs.len() as f64, max_relative = 1e-12);

        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (serial, _) = pool.install(|| average_socm(&dump, &pairs, "m")).unwrap();
        assert_eq!(serial, rep);
    }

    #[test]
    fn degenerate_texts_are_skipped() {
        let mut dump = random_dump(4, 3, 5);
        dump[2] = TokenMatrix::from_columns(2, &[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]).unwrap();
        let (rep, recs) = average_socm(&dump, &PairIndex::all(4), "m").unwrap();
        assert_eq!(rep.skipped_pairs, 3);
        assert_eq!(rep.used_pairs + rep.skipped_pairs, rep.pair_count);
        assert_eq!(rep.degenerate_texts, vec![2]);
        assert_eq!(recs.len(), 3);
        assert_eq!(rep.histogram.iter().sum::<u64>(), 3);
    }

    #[test]
    fn out_of_range_index() {
        let dump = random_dump(3, 3, 6);
        let pairs = PairIndex::all(5);
        assert!(matches!(average_socm(&dump, &pairs, "m"), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn scatter_rows() {
        let mut buf = Vec::new();
        scatter_export(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "d_mu,d_sigma,socm,clamped\n");

        let dump = random_dump(6, 4, 7);
        let (rep, recs) = average_socm(&dump, &PairIndex::all(6), "m").unwrap();
        let mut buf = Vec::new();
        scatter_export(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), rep.used_pairs + 1);
        let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        let (dm, ds, s): (f64, f64, f64) = (first[0].parse().unwrap(), first[1].parse().unwrap(), first[2].parse().unwrap());
        assert_eq!(s, (1.0 - dm) * ds);
    }

    #[test]
    fn histogram_edges() {
        assert_eq!(histogram_bin(0.0), 0);
        assert_eq!(histogram_bin(0.0099), 0);
        assert_eq!(histogram_bin(0.01), 1);
        assert_eq!(histogram_bin(1.0), 99);
    }

    // Independent oracle: ranks by counting, then textbook Pearson.
    fn rank_oracle(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }

    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[5.0, 3.0, 2.0, -1.0]).unwrap(), -1.0);
        let x = [1.0, 2.0, 2.0, 3.0];
        let y = [10.0, 20.0, 20.0, 40.0];
        let expected = pearson_oracle(&rank_oracle(&x), &rank_oracle(&y));
        assert!((spearman(&x, &y).unwrap() - expected).abs() <= 1e-12);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn correlation_join() {
        let rep = |label: &str, m: f64| CorpusReport {
            model_label: label.into(),
            text_count: 2,
            sample_size: 2,
            sample_seed: 0,
            pair_count: 1,
            used_pairs: 1,
            skipped_pairs: 0,
            degenerate_texts: vec![],
            mean_socm: Some(m),
            mean_d_mu: Some(0.0),
            mean_d_sigma: Some(0.0),
            clamped_count: 0,
            histogram: vec![0; HISTOGRAM_BINS],
        };
        let scores = read_scores("model_label,score\nb, 60.0\na,50.0\nc,70\n".as_bytes()).unwrap();
        let c = correlate(&[rep("a", 0.4), rep("b", 0.2)], &scores).unwrap();
        assert_eq!(c.rho, -1.0);
        assert_eq!(c.rows[0].model_label, "a");
        assert!(correlate(&[rep("a", 0.4), rep("z", 0.2)], &scores).is_err());

        let mut buf = Vec::new();
        write_correlation_csv(&c, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "model_label,mean_socm,score,spearman_rho\na,0.4,50,-1\nb,0.2,60,-1\n"
        );
    }

    #[test]
    fn pca_ray_data() {
        let x1 = TokenMatrix::from_columns(0, &[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
        let x2 = TokenMatrix::from_columns(1, &[vec![-0.5, 0.0, 0.0]]).unwrap();
        let p = pca_project_uncentered(&x1, &x2).unwrap();
        assert_relative_eq!(p.components[0], DVector::from_vec(vec![1.0, 0.0, 0.0]), epsilon = 1e-12);
        assert!(p.points.iter().all(|pt| pt.pc2.abs() < 1e-12));
        assert_relative_eq!(p.points[1].pc1, 2.0, epsilon = 1e-12);
        assert!(pca_project_uncentered(
            &TokenMatrix::from_columns(0, &[vec![0.0, 0.0]]).unwrap(),
            &TokenMatrix::from_columns(1, &[vec![0.0, 0.0]]).unwrap()
        )
        .is_err());
    }

    #[test]
    fn pca_means_and_reconstruction() {
        let dump = random_dump(2, 5, 8);
        let (x1, x2) = (&dump[0], &dump[1]);
        let p = pca_project_uncentered(x1, x2).unwrap();

        // projected mean = mean of projected tokens
        let mut offset = 0;
        for x in [x1, x2] {
            let toks = &p.points[offset..offset + x.len()];
            let mean_pt = &p.points[offset + x.len()];
            assert!(mean_pt.is_mean);
            let m1 = toks.iter().map(|t| t.pc1).sum::<f64>() / x.len() as f64;
            let m2 = toks.iter().map(|t| t.pc2).sum::<f64>() / x.len() as f64;
            assert_relative_eq!(mean_pt.pc1, m1, epsilon = 1e-12);
            assert_relative_eq!(mean_pt.pc2, m2, epsilon = 1e-12);
            offset += x.len() + 1;
        }

        // full-SVD oracle: residual energy = discarded squared singular values
        let cols: Vec<_> = x1.values().column_iter().chain(x2.values().column_iter()).map(|c| c.into_owned()).collect();
        let mut residual = 0.0;
        let mut energy = 0.0;
        for c in &cols {
            let a = c.dot(&p.components[0]);
            let b = c.dot(&p.components[1]);
            let rec = &p.components[0] * a + &p.components[1] * b;
            residual += (c - rec).norm_squared();
            energy += c.norm_squared();
        }
        let full = DMatrix::from_columns(&cols).transpose().singular_values();
        let mut sv: Vec<f64> = full.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = sv[2..].iter().map(|s| s * s).sum();
        assert_relative_eq!(residual, discarded, epsilon = 1e-9 * energy);

        for comp in &p.components {
            let k = comp.iamax();
            assert!(comp[k] > 0.0);
            assert_relative_eq!(comp.norm(), 1.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn spearman_monotone_invariance(
            xs in proptest::collection::vec(-100.0f64..100.0, 3..20),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = xs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(rho) = spearman(&xs, &ys) {
                let tx: Vec<f64> = xs.iter().map(|v| (v / 50.0).exp()).collect();
                let ty: Vec<f64> = ys.iter().map(|v| v * v * v + 2.0).collect();
                let rho2 = spearman(&tx, &ty).unwrap();
                prop_assert!((rho - rho2).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&rho));
            }
        }

        #[test]
        fn mean_socm_in_unit_interval(seed in any::<u64>()) {
            let dump = random_dump(6, 3, seed);
            let (rep, _) = average_socm(&dump, &PairIndex::all(6), "m").unwrap();
            if let Some(m) = rep.mean_socm {
                prop_assert!((0.0..=1.0).contains(&m));
            }
            prop_assert_eq!(rep.histogram.iter().sum::<u64>() as usize, rep.used_pairs);
        }
    }
}
