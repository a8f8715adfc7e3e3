//! Second-order collapse by mean pooling (SOCM).
//!
//! Mean pooling maps a list of token embeddings to a single vector and in
//! doing so discards the within-text covariance. This crate measures how
//! much second-order structure two texts lose when pooled, via
//!
//! ```text
//! SOCM = (1 - d_mu) * d_sigma
//! ```
//!
//! where `d_mu` is the scaled squared distance between unit-normalized means
//! and `d_sigma` the scaled Bures–Wasserstein distance between the token
//! covariances. Around the metric sit:
//!
//! - [`tensor_io`]: the binary dump format shared with the embedding extractor,
//! - [`stats`]: mean pooling, covariance summaries, spread and concentration,
//! - [`metric`]: `d_mu`, `d_sigma`, SOCM and the Gaussian W2 decomposition,
//! - [`layers`]: per-layer λ / r / C / concentration / cosine profiles,
//! - [`theory`]: a synthetic single-head layer and Monte Carlo bound checks,
//! - [`harness`]: pair sampling, corpus averages, scatter/PCA/correlation exports,
//! - [`cli`]: the `socm` command line.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod error;
pub mod harness;
pub mod layers;
pub mod linalg;
pub mod metric;
pub mod stats;
pub mod tensor_io;
pub mod theory;

pub use error::{Error, Result};
pub use harness::{average_socm, sample_pairs, spearman, CorpusReport, PairIndex};
pub use layers::{layer_profiles, LayerProfile};
pub use metric::{d_mu, d_sigma, socm, socm_pair, w2_gaussian_squared, PairStats};
pub use stats::{mean_pool, normalize_list, summarize, GaussianSummary, MEAN_NORM_FLOOR};
pub use tensor_io::{LayerDumpRecord, TokenMatrix};
