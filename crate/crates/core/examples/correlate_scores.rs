//! Rank correlation between per-model mean SOCM and a downstream score.
//!
//!     cargo run --example correlate_scores

use socm::harness::{correlate, read_scores, CorpusReport, HISTOGRAM_BINS};
use socm::spearman;

fn report(label: &str, mean: f64) -> CorpusReport {
    CorpusReport {
        model_label: label.into(),
        text_count: 100,
        sample_size: 100,
        sample_seed: 0,
        pair_count: 4950,
        used_pairs: 4950,
        skipped_pairs: 0,
        degenerate_texts: vec![],
        mean_socm: Some(mean),
        mean_d_mu: None,
        mean_d_sigma: None,
        clamped_count: 0,
        histogram: vec![0; HISTOGRAM_BINS],
    }
}

fn main() -> socm::Result<()> {
    let reports = [report("backbone", 0.39), report("tuned-a", 0.02), report("tuned-b", 0.05), report("tuned-c", 0.11)];
    let scores = read_scores("model_label,score\nbackbone,0.41\ntuned-a,0.63\ntuned-b,0.60\ntuned-c,0.60\n".as_bytes())?;
    let c = correlate(&reports, &scores)?;
    for r in &c.rows {
        println!("{:<10} socm {:.3}  score {:.2}", r.model_label, r.mean_socm, r.score);
    }
    println!("spearman rho = {:.4}", c.rho);

    // tied values take their average rank
    println!("tied example: {:.4}", spearman(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 40.0])?);
    Ok(())
}
