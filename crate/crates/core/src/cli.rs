//! The `socm` command line.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 bad input,
//! 3 numeric failure. Progress goes to stderr; data goes to files or stdout.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{self, CorpusReport, PairIndex};
use crate::layers;
use crate::tensor_io;
use crate::theory::{self, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "socm", version, about = "Second-order collapse by mean pooling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads (defaults to available cores; results do not depend on it).
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,

    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Average SOCM over sampled text pairs of a token dump.
    Compute(ComputeArgs),
    /// Per-layer λ / r / C / concentration / cosine profile of a layer dump.
    Layers(LayersArgs),
    /// Axiom grid, Monte Carlo bounds and trace identity checks.
    Verify(VerifyArgs),
    /// Spearman correlation of mean SOCM against downstream scores.
    Correlate(CorrelateArgs),
    /// Uncentered PCA projection of two texts.
    Project(ProjectArgs),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairsArg {
    All,
    Count(usize),
}

fn parse_pairs(s: &str) -> std::result::Result<PairsArg, String> {
    if s == "all" {
        return Ok(PairsArg::All);
    }
    s.parse()
        .map(PairsArg::Count)
        .map_err(|_| format!("expected `all` or a pair count, got `{s}`"))
}

fn parse_text_pair(s: &str) -> std::result::Result<(u32, u32), String> {
    let bad = || format!("expected two text ids like `3,7`, got `{s}`");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    /// Token dump.
    #[arg(long)]
    pub input: PathBuf,
    /// Report JSON; the scatter CSV is written beside it as `<stem>.scatter.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Texts to sample (default: all).
    #[arg(long)]
    pub sample_size: Option<usize>,
    /// `all` pairs of the sample, or a seeded subset of N of them.
    #[arg(long, default_value = "all", value_parser = parse_pairs)]
    pub pairs: PairsArg,
    /// Model label recorded in the report (default: input file stem).
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct LayersArgs {
    #[arg(long)]
    pub layer_input: PathBuf,
    /// Profile CSV (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// JSON configuration; defaults are used for missing fields or when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Verification JSON (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Report JSON files from `compute`.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Two-column CSV `model_label,score`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Two text ids, e.g. `--texts 3,7`.
    #[arg(long, value_parser = parse_text_pair)]
    pub texts: (u32, u32),
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_INPUT
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(p) = cli.parallelism {
        if p == 0 {
            return Err(Error::Config("--parallelism must be >= 1".into()));
        }
        pool = pool.num_threads(p);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Compute(a) => cmd_compute(a, cli.verbose),
        Command::Layers(a) => cmd_layers(a, cli.verbose),
        Command::Verify(a) => cmd_verify(a, cli.verbose),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Project(a) => cmd_project(a),
    })
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path.unwrap_or(Path::new("<stdout>")), e))
}

/// `report.json` → `report.scatter.csv`.
pub fn scatter_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.scatter.csv"))
}

/// Keeps a seeded subset of `count` pairs, preserving lexicographic order.
fn subsample_pairs(mut index: PairIndex, count: usize, seed: u64) -> Result<PairIndex> {
    if count > index.len() {
        return Err(Error::Config(format!(
            "requested {count} pairs but only {} exist",
            index.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut keep = rand::seq::index::sample(&mut rng, index.len(), count).into_vec();
    keep.sort_unstable();
    index.pairs = keep.into_iter().map(|k| index.pairs[k]).collect();
    Ok(index)
}

pub fn cmd_compute(a: &ComputeArgs, verbose: bool) -> Result<i32> {
    let dump = tensor_io::read_token_dump(&a.input)?;
    let sample_size = a.sample_size.unwrap_or(dump.len());
    let mut pairs = harness::sample_pairs(dump.len(), sample_size, a.seed)?;
    if let PairsArg::Count(n) = a.pairs {
        pairs = subsample_pairs(pairs, n, a.seed)?;
    }
    let label = a.label.clone().unwrap_or_else(|| {
        a.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    if verbose {
        eprintln!("{} texts, {} sampled, {} pairs", dump.len(), sample_size, pairs.len());
    }
    let (report, records) = harness::average_socm(&dump, &pairs, &label)?;
    write_json(&report, Some(&a.out))?;
    let scatter = scatter_path(&a.out);
    harness::scatter_export(&records, sink(Some(&scatter))?)?;
    if verbose {
        eprintln!(
            "mean SOCM {:?} over {} pairs ({} skipped, {} clamped)",
            report.mean_socm, report.used_pairs, report.skipped_pairs, report.clamped_count
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_layers(a: &LayersArgs, verbose: bool) -> Result<i32> {
    let records = tensor_io::read_layer_dump(&a.layer_input)?;
    let report = layers::layer_profiles(&records)?;
    if verbose {
        for t in &report.texts {
            eprintln!(
                "layer {} text {}: lambda per head {:?}",
                t.layer_index, t.text_id, t.lambda_per_head
            );
        }
        for (layer, skipped) in &report.empty_layers {
            eprintln!("layer {layer}: all {skipped} texts skipped");
        }
    }
    layers::write_profiles_csv(&report.profiles, sink(a.out.as_deref())?)?;
    Ok(EXIT_OK)
}

pub fn load_verify_config(path: Option<&Path>, seed: Option<u64>) -> Result<VerifyConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => VerifyConfig::default(),
    };
    if let Some(s) = seed {
        for c in &mut cfg.layer_bound {
            c.rng_seed = s;
        }
        cfg.concentration_bound.rng_seed = s;
    }
    Ok(cfg)
}

pub fn cmd_verify(a: &VerifyArgs, verbose: bool) -> Result<i32> {
    let cfg = load_verify_config(a.config.as_deref(), a.seed)?;
    let report = theory::run_verification(&cfg)?;
    if verbose {
        for p in &report.grid.properties {
            eprintln!("{}: {}", p.name, if p.passed { "pass" } else { "FAIL" });
        }
        for b in &report.layer_bound {
            eprintln!(
                "layer bound {:?}: lhs {:.6} rhs {:.6} lambda {:.4} -> {}",
                b.config.transform, b.lhs, b.rhs, b.lambda, b.holds
            );
        }
        for t in &report.concentration_bound {
            eprintln!("epsilon {}: max SOCM {:.6} ({} violations)", t.epsilon, t.max_socm, t.violations);
        }
    }
    write_json(&report, a.out.as_deref())?;
    Ok(if report.passes { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn cmd_correlate(a: &CorrelateArgs) -> Result<i32> {
    let mut reports = Vec::new();
    for p in &a.input {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let r: CorpusReport = serde_json::from_str(&text)?;
        reports.push(r);
    }
    let scores_file = fs::File::open(&a.scores).map_err(|e| Error::io(&a.scores, e))?;
    let scores = harness::read_scores(scores_file)?;
    let c = harness::correlate(&reports, &scores)?;
    harness::write_correlation_csv(&c, sink(a.out.as_deref())?)?;
    Ok(EXIT_OK)
}

pub fn cmd_project(a: &ProjectArgs) -> Result<i32> {
    let dump = tensor_io::read_token_dump(&a.input)?;
    let find = |id: u32| {
        dump.iter()
            .find(|t| t.text_id == id)
            .ok_or_else(|| Error::Validation(format!("text id {id} not in dump")))
    };
    let (x1, x2) = (find(a.texts.0)?, find(a.texts.1)?);
    let p = harness::pca_project_uncentered(x1, x2)?;
    harness::write_projection_csv(&p, sink(a.out.as_deref())?)?;
    Ok(EXIT_OK)
}
