//! Synthetic single-head layer and Monte Carlo checks of the concentration bounds.
//!
//! The simulated layer is
//!
//! ```text
//! h_j ~ N(η, c I)  i.i.d.,   Z = W_o W_v H Aᵀ,   Y = Z + H,   x_j = g(y_j)
//! ```
//!
//! with `A` drawn once per configuration and held fixed across trials. The
//! checks here are finite inequalities:
//!
//! - attention contraction: `E[S(Z)] ≤ λ E[S(H)]`,
//! - layer bound: `E[S(X)] / E[‖μ(X)‖²] ≤ C (1 + √λ)² r`,
//! - pooled collapse: lists with `S(X)/‖μ(X)‖² < ε` give `SOCM < ε/2`,
//! - trace identity for shared-parameter layer norm outputs:
//!   `tr Σ(X_norm) = (n-1)(1-c̄) / (1+(n-1)c̄)` with `c̄` the mean distinct-pair cosine.
//!
//! Every random draw comes from [`RNG_ALGORITHM`]; trial `t` uses stream `t` of
//! the generator seeded with `rng_seed`, so results do not depend on how trials
//! are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::lambda_from_norm;
use crate::linalg;
use crate::metric::{normalized_summary, socm, socm_pair};
use crate::stats::{avg_distinct_pair_cosine, concentration, spread};
use crate::tensor_io::TokenMatrix;

pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64, stream = trial index";

pub const DEFAULT_SLACK: f64 = 0.05;

/// Tolerance for the trace identity check.
pub const TRACE_TOL: f64 = 1e-3;

/// Tolerance on the realized cosine vs the requested one.
pub const COSINE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// Row softmax of standard-normal logits.
    RandomSoftmax,
    /// Every row equal to `1/n`.
    Uniform,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    UniformScale { s: f64 },
    /// Layer norm with parameters shared across dimensions.
    Layernorm { gamma: f64, beta: f64 },
}

impl Transform {
    fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        match *self {
            Transform::Identity => y.clone(),
            Transform::UniformScale { s } => y * s,
            Transform::Layernorm { gamma, beta } => {
                let mut x = y.clone();
                for mut col in x.column_iter_mut() {
                    layernorm_in_place(&mut col, gamma, beta);
                }
                x
            }
        }
    }

    /// Transforms for which the layer bound is asserted, not only reported.
    pub fn is_gating(&self) -> bool {
        !matches!(self, Transform::Layernorm { .. })
    }
}

fn layernorm_in_place<S>(col: &mut nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::U1, S>, gamma: f64, beta: f64)
where
    S: nalgebra::StorageMut<f64, nalgebra::Dyn, nalgebra::U1>,
{
    let d = col.nrows() as f64;
    let mean = col.sum() / d;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    for v in col.iter_mut() {
        *v = gamma * (*v - mean) * inv + beta;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub d: usize,
    pub n: usize,
    /// Mean of the input tokens; must be nonzero and of length `d`.
    pub eta: Vec<f64>,
    /// Noise variance `c`.
    pub c: f64,
    pub attention: AttentionKind,
    pub attention_seed: u64,
    pub projection_seed: u64,
    pub head_dim: usize,
    /// Initial multiplier on the random output projection.
    pub projection_scale: f64,
    /// Halvings of the projection scale allowed while `λ ≥ 1`.
    pub max_rescale: usize,
    pub transform: Transform,
    pub trials: usize,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            d: 8,
            n: 8,
            eta: vec![1.0; 8],
            c: 0.5,
            attention: AttentionKind::RandomSoftmax,
            attention_seed: 1,
            projection_seed: 2,
            head_dim: 4,
            projection_scale: 1.0,
            max_rescale: 30,
            transform: Transform::Identity,
            trials: 10_000,
            rng_seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.n < 2 {
            return Err(Error::Config(format!("need d, n >= 2 (got d={}, n={})", self.d, self.n)));
        }
        if self.eta.len() != self.d {
            return Err(Error::Config(format!("eta has length {}, expected {}", self.eta.len(), self.d)));
        }
        if self.eta.iter().all(|&v| v == 0.0) || self.eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("eta must be finite and nonzero".into()));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!("noise variance must be positive, got {}", self.c)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.head_dim == 0 {
            return Err(Error::Config("head_dim must be >= 1".into()));
        }
        if !(self.projection_scale.is_finite()) {
            return Err(Error::Config("projection_scale must be finite".into()));
        }
        if let Transform::UniformScale { s } = self.transform {
            if !(s > 0.0) {
                return Err(Error::Config(format!("uniform scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Fixed parameters of a simulated layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLayer {
    pub attention: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w_o: DMatrix<f64>,
    pub w_ov: DMatrix<f64>,
    pub lambda: f64,
    /// Multiplier finally applied to `W_o` to reach `λ < 1`.
    pub projection_scale: f64,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

pub fn attention_matrix(kind: AttentionKind, n: usize, seed: u64) -> DMatrix<f64> {
    match kind {
        AttentionKind::Uniform => DMatrix::from_element(n, n, 1.0 / n as f64),
        AttentionKind::Identity => DMatrix::identity(n, n),
        AttentionKind::RandomSoftmax => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = normal_matrix(n, n, 1.0, &mut rng);
            for mut row in a.row_iter_mut() {
                let max = row.max();
                row.apply(|v| *v = (*v - max).exp());
                let s = row.sum();
                row /= s;
            }
            a
        }
    }
}

impl SyntheticLayer {
    /// Draws `A`, `W_v`, `W_o`, halving the output-projection scale until `λ < 1`.
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let attention = attention_matrix(cfg.attention, cfg.n, cfg.attention_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.projection_seed);
        let std = 1.0 / (cfg.d as f64).sqrt();
        let w_v = normal_matrix(cfg.head_dim, cfg.d, std, &mut rng);
        let w_o_base = normal_matrix(cfg.d, cfg.head_dim, std, &mut rng);

        let mut scale = cfg.projection_scale;
        for _ in 0..=cfg.max_rescale {
            let w_o = &w_o_base * scale;
            let norm = linalg::product_operator_norm(&w_o, &w_v);
            let lambda = lambda_from_norm(&attention, norm)?;
            if lambda < 1.0 {
                let w_ov = &w_o * &w_v;
                return Ok(SyntheticLayer {
                    attention,
                    w_v,
                    w_o,
                    w_ov,
                    lambda,
                    projection_scale: scale,
                });
            }
            scale *= 0.5;
        }
        Err(Error::Config(format!(
            "λ >= 1 after {} rescale attempts",
            cfg.max_rescale
        )))
    }
}

/// One simulated draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub h: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn run_trial(cfg: &SyntheticConfig, layer: &SyntheticLayer, trial: usize) -> Trial {
    let mut rng = trial_rng(cfg.rng_seed, trial);
    let sd = cfg.c.sqrt();
    let h = DMatrix::from_fn(cfg.d, cfg.n, |i, _| {
        cfg.eta[i] + sd * rng.sample::<f64, _>(StandardNormal)
    });
    let z = &layer.w_ov * &h * layer.attention.transpose();
    let y = &z + &h;
    let x = cfg.transform.apply(&y);
    Trial { h, z, y, x }
}

/// Simulates `cfg.trials` draws of the layer.
pub fn simulate_layer(cfg: &SyntheticConfig) -> Result<(SyntheticLayer, Vec<Trial>)> {
    let layer = SyntheticLayer::generate(cfg)?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &layer, t))
        .collect();
    Ok((layer, trials))
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    spread_h: f64,
    spread_z: f64,
    spread_y: f64,
    spread_x: f64,
    mean_sq_y: f64,
    mean_sq_x: f64,
}

impl Moments {
    fn of(t: &Trial) -> Self {
        Moments {
            spread_h: spread(&t.h),
            spread_z: spread(&t.z),
            spread_y: spread(&t.y),
            spread_x: spread(&t.x),
            mean_sq_y: t.y.column_mean().norm_squared(),
            mean_sq_x: t.x.column_mean().norm_squared(),
        }
    }

    fn add(&mut self, o: &Moments) {
        self.spread_h += o.spread_h;
        self.spread_z += o.spread_z;
        self.spread_y += o.spread_y;
        self.spread_x += o.spread_x;
        self.mean_sq_y += o.mean_sq_y;
        self.mean_sq_x += o.mean_sq_x;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub config: SyntheticConfig,
    pub lambda: f64,
    pub projection_scale: f64,
    /// `E[S(H)] / E[‖μ(Y)‖²]`.
    pub r: f64,
    /// Smallest `C` consistent with the trial averages.
    pub c_estimate: f64,
    /// `E[S(X)] / E[‖μ(X)‖²]`.
    pub lhs: f64,
    /// `C (1 + √λ)² r`.
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    pub mean_spread_h: f64,
    /// `c d (n-1) / n`.
    pub expected_spread_h: f64,
    pub spread_h_rel_error: f64,
    pub mean_spread_z: f64,
    /// `E[S(Z)] ≤ λ E[S(H)] (1 + slack)`.
    pub contraction_holds: bool,
    /// Whether `holds` is asserted for this transform.
    pub gating: bool,
    pub rng_algorithm: String,
}

/// Monte Carlo check of the layer bound for one configuration.
pub fn verify_layer_bound(cfg: &SyntheticConfig, slack: f64) -> Result<BoundReport> {
    let layer = SyntheticLayer::generate(cfg)?;
    let per_trial: Vec<Moments> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| Moments::of(&run_trial(cfg, &layer, t)))
        .collect();
    let mut sum = Moments::default();
    for m in &per_trial {
        sum.add(m);
    }
    let k = cfg.trials as f64;
    let e = Moments {
        spread_h: sum.spread_h / k,
        spread_z: sum.spread_z / k,
        spread_y: sum.spread_y / k,
        spread_x: sum.spread_x / k,
        mean_sq_y: sum.mean_sq_y / k,
        mean_sq_x: sum.mean_sq_x / k,
    };
    if !(e.mean_sq_y > 0.0) || !(e.mean_sq_x > 0.0) {
        return Err(Error::Numeric("mean of Y or X vanished in every trial".into()));
    }
    let y_ratio = e.spread_y / e.mean_sq_y;
    if !(y_ratio > 0.0) {
        return Err(Error::Numeric("E[S(Y)] = 0; C is undefined".into()));
    }
    let lhs = e.spread_x / e.mean_sq_x;
    let c_estimate = lhs / y_ratio;
    let r = e.spread_h / e.mean_sq_y;
    let rhs = c_estimate * (1.0 + layer.lambda.sqrt()).powi(2) * r;
    let expected = cfg.c * cfg.d as f64 * (cfg.n as f64 - 1.0) / cfg.n as f64;
    Ok(BoundReport {
        config: cfg.clone(),
        lambda: layer.lambda,
        projection_scale: layer.projection_scale,
        r,
        c_estimate,
        lhs,
        rhs,
        slack,
        holds: lhs <= rhs * (1.0 + slack),
        mean_spread_h: e.spread_h,
        expected_spread_h: expected,
        spread_h_rel_error: (e.spread_h - expected).abs() / expected,
        mean_spread_z: e.spread_z,
        // absolute floor: with λ = 0 the branch output is constant up to rounding
        contraction_holds: e.spread_z <= layer.lambda * e.spread_h * (1.0 + slack) + 1e-12 * e.spread_h,
        gating: cfg.transform.is_gating(),
        rng_algorithm: RNG_ALGORITHM.into(),
    })
}

// ---------------------------------------------------------------------------
// pooled collapse under concentration

/// Builds a list of `n` tokens in `d` dimensions with concentration `target`.
///
/// Tokens are `m u + E` with `u` a random unit vector, `m` a random magnitude
/// and `E` row-centered Gaussian noise rescaled so that `S(E) = target · m²`.
pub fn concentrated_list(d: usize, n: usize, target: f64, rng: &mut ChaCha8Rng) -> Result<TokenMatrix> {
    let mut u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let un = u.norm();
    if un == 0.0 {
        return Err(Error::Generator("zero mean direction".into()));
    }
    u /= un;
    let m: f64 = rng.random_range(0.5..3.0);
    let mut noise = normal_matrix(d, n, 1.0, rng);
    let row_mean = noise.column_mean();
    for mut col in noise.column_iter_mut() {
        col -= &row_mean;
    }
    let s = spread(&noise);
    if s > 0.0 {
        noise *= (target * m * m / s).sqrt();
    }
    let mut x = noise;
    for mut col in x.column_iter_mut() {
        col.axpy(m, &u, 1.0);
    }
    TokenMatrix::new(0, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPoint {
    pub delta: f64,
    pub concentration: f64,
    pub socm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub epsilon: f64,
    pub trials: usize,
    pub d: usize,
    pub rng_seed: u64,
    pub max_socm: f64,
    pub max_concentration: f64,
    pub violations: usize,
    pub point_mass_socm: f64,
    /// Identical means, orthogonal rank-one covariances at concentration `ε(1-δ)`.
    pub adversarial: Vec<AdversarialPoint>,
    pub passes: bool,
    pub rng_algorithm: String,
}

/// Two-token lists `u ± a v₁` and `u ± a v₂` with `a² = ε (1 - δ)`.
///
/// Means coincide and covariances are orthogonal, so `SOCM = ε (1 - δ) / 2`.
pub fn adversarial_pair(epsilon: f64, delta: f64, d: usize) -> Result<(TokenMatrix, TokenMatrix)> {
    if d < 3 {
        return Err(Error::Generator("adversarial pair needs d >= 3".into()));
    }
    let a = (epsilon * (1.0 - delta)).sqrt();
    let col = |axis: usize, sign: f64| {
        let mut v = vec![0.0; d];
        v[0] = 1.0;
        v[axis] = sign * a;
        v
    };
    Ok((
        TokenMatrix::from_columns(0, &[col(1, 1.0), col(1, -1.0)])?,
        TokenMatrix::from_columns(1, &[col(2, 1.0), col(2, -1.0)])?,
    ))
}

/// Checks `SOCM < ε/2` on `trials` pairs whose concentrations are below `ε`.
pub fn verify_concentration_bound(epsilon: f64, trials: usize, d: usize, seed: u64) -> Result<ConcentrationReport> {
    if !(epsilon > 0.0) || trials == 0 || d < 3 {
        return Err(Error::Config(format!(
            "need epsilon > 0, trials >= 1, d >= 3 (got {epsilon}, {trials}, {d})"
        )));
    }
    let results: Vec<Result<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let mut conc_max: f64 = 0.0;
            let mut lists = Vec::with_capacity(2);
            for _ in 0..2 {
                let n = rng.random_range(1..=12);
                let target = epsilon * rng.random_range(0.0..0.95);
                let x = concentrated_list(d, n, target, &mut rng)?;
                let conc = concentration(&x)?;
                if !(conc < epsilon) {
                    return Err(Error::Generator(format!(
                        "constructed concentration {conc} is not below {epsilon}"
                    )));
                }
                conc_max = conc_max.max(conc);
                lists.push(x);
            }
            Ok((socm_pair(&lists[0], &lists[1])?.socm, conc_max))
        })
        .collect();

    let mut max_socm: f64 = 0.0;
    let mut max_concentration: f64 = 0.0;
    let mut violations = 0;
    for r in results {
        let (s, c) = r?;
        if s >= epsilon / 2.0 {
            violations += 1;
        }
        max_socm = max_socm.max(s);
        max_concentration = max_concentration.max(c);
    }

    // point masses: a doubled token averages exactly, a single token trivially
    let point = TokenMatrix::new(0, DMatrix::from_fn(d, 2, |i, _| (i + 1) as f64))?;
    let other = TokenMatrix::new(1, DMatrix::from_fn(d, 1, |i, _| 1.0 / (i + 1) as f64))?;
    let point_mass_socm = socm_pair(&point, &other)?.socm;

    let mut adversarial = Vec::new();
    for delta in [0.1, 0.01, 0.001] {
        let (x1, x2) = adversarial_pair(epsilon, delta, d)?;
        let s = socm_pair(&x1, &x2)?.socm;
        if s >= epsilon / 2.0 {
            violations += 1;
        }
        adversarial.push(AdversarialPoint {
            delta,
            concentration: concentration(&x1)?.max(concentration(&x2)?),
            socm: s,
        });
    }

    Ok(ConcentrationReport {
        epsilon,
        trials,
        d,
        rng_seed: seed,
        max_socm,
        max_concentration,
        violations,
        point_mass_socm,
        adversarial,
        passes: violations == 0 && point_mass_socm == 0.0,
        rng_algorithm: RNG_ALGORITHM.into(),
    })
}

// ---------------------------------------------------------------------------
// trace of the normalized covariance after shared-parameter layer norm

/// `(n-1)(1-c̄) / (1+(n-1)c̄)`.
pub fn trace_bound_formula(n: usize, mean_cosine: f64) -> f64 {
    let m = n as f64 - 1.0;
    m * (1.0 - mean_cosine) / (1.0 + m * mean_cosine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBoundCase {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub beta: f64,
    pub target_cos: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBoundReport {
    pub case: TraceBoundCase,
    pub realized_cos: f64,
    pub trace: f64,
    pub formula: f64,
    pub abs_error: f64,
    pub below_two: bool,
    pub holds: bool,
}

/// Centered orthonormal vectors in `R^d`, `count ≤ d - 1`.
fn centered_orthonormal(d: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let ones = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut basis: Vec<DVector<f64>> = vec![ones];
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        for _ in 0..2 {
            for b in &basis {
                let p = v.dot(b);
                v.axpy(-p, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm < 1e-8 {
            continue;
        }
        v /= norm;
        basis.push(v.clone());
        out.push(v);
    }
    out
}

/// Layer-norm outputs `γ z_j + β` for `z_j ∝ t s + (1 - t) e_j`.
fn layernorm_tokens(shared: &DVector<f64>, own: &[DVector<f64>], t: f64, gamma: f64, beta: f64) -> DMatrix<f64> {
    let d = shared.len();
    let mut x = DMatrix::zeros(d, own.len());
    for (j, e) in own.iter().enumerate() {
        let mut col = x.column_mut(j);
        col.copy_from(&(shared * t + e * (1.0 - t)));
        layernorm_in_place(&mut col, gamma, beta);
    }
    x
}

/// Checks the trace identity on constructed layer-norm outputs.
///
/// The token directions are mixtures of one shared centered direction and
/// per-token centered directions, all mutually orthogonal, so the mean
/// distinct-pair cosine rises monotonically with the mixing weight and is
/// solved for by bisection.
pub fn verify_trace_bound(case: &TraceBoundCase) -> Result<TraceBoundReport> {
    let TraceBoundCase { n, d, gamma, beta, target_cos, seed } = *case;
    if n < 2 {
        return Err(Error::Config("trace bound needs n >= 2".into()));
    }
    if d < n + 2 {
        return Err(Error::Config(format!("trace bound construction needs d >= n + 2 (n={n}, d={d})")));
    }
    if !(gamma != 0.0) || !gamma.is_finite() || !beta.is_finite() {
        return Err(Error::Config("gamma must be nonzero and finite".into()));
    }
    let min_cos = beta * beta / (gamma * gamma + beta * beta);
    if !(target_cos >= min_cos - COSINE_TOL) || target_cos > 1.0 {
        return Err(Error::Generator(format!(
            "cosine {target_cos} is not reachable: range is [{min_cos}, 1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = centered_orthonormal(d, n + 1, &mut rng);
    let shared = dirs.remove(0);

    let cos_at = |t: f64| -> Result<(f64, DMatrix<f64>)> {
        let x = layernorm_tokens(&shared, &dirs, t, gamma, beta);
        Ok((avg_distinct_pair_cosine(&x)?, x))
    };

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let (mut realized, mut tokens) = cos_at(if target_cos >= 1.0 { 1.0 } else { 0.0 })?;
    if target_cos < 1.0 && realized < target_cos {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let (c, x) = cos_at(mid)?;
            realized = c;
            tokens = x;
            if (c - target_cos).abs() <= 1e-9 {
                break;
            }
            if c < target_cos {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    if (realized - target_cos).abs() > COSINE_TOL {
        return Err(Error::Generator(format!(
            "construction reached cosine {realized}, requested {target_cos}"
        )));
    }

    let trace = normalized_summary(&TokenMatrix::new(0, tokens)?)?.trace_sigma;
    let formula = trace_bound_formula(n, realized);
    let abs_error = (trace - formula).abs();
    Ok(TraceBoundReport {
        case: case.clone(),
        realized_cos: realized,
        trace,
        formula,
        abs_error,
        below_two: trace < 2.0,
        holds: abs_error <= TRACE_TOL,
    })
}

// ---------------------------------------------------------------------------
// axiom grid

pub const GRID_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// `(d_mu, d_sigma, socm)` at the four corners.
    pub corners: Vec<(f64, f64, f64)>,
    pub properties: Vec<PropertyCheck>,
    pub passes: bool,
}

fn grid_value(k: usize) -> f64 {
    k as f64 / GRID_STEPS as f64
}

/// Evaluates SOCM on the 101 x 101 grid over `[0, 1]²` and checks the five axioms.
pub fn property_grid() -> Result<GridReport> {
    let m = GRID_STEPS + 1;
    // values[i][j] = socm(d_mu = i/100, d_sigma = j/100)
    let mut values = vec![vec![0.0; m]; m];
    for (i, row) in values.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = socm(grid_value(i), grid_value(j))?;
        }
    }

    let mut checks = Vec::new();
    let mut check = |name: &str, failures: Vec<String>| {
        checks.push(PropertyCheck {
            name: name.into(),
            passed: failures.is_empty(),
            detail: if failures.is_empty() {
                "ok".into()
            } else {
                format!("{} failures, first: {}", failures.len(), failures[0])
            },
        });
    };

    let mut fails = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let at_corner = i == 0 && j == GRID_STEPS;
            if (values[i][j] == 1.0) != at_corner {
                fails.push(format!("socm({}, {}) = {}", grid_value(i), grid_value(j), values[i][j]));
            }
        }
    }
    check("(a) socm = 1 iff d_mu = 0 and d_sigma = 1", fails);

    let mut fails = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let expect_zero = i == GRID_STEPS || j == 0;
            if (values[i][j] == 0.0) != expect_zero {
                fails.push(format!("socm({}, {}) = {}", grid_value(i), grid_value(j), values[i][j]));
            }
        }
    }
    check("(b) socm = 0 iff d_mu = 1 or d_sigma = 0", fails);

    let mut fails = Vec::new();
    for j in 0..m {
        for i in 0..GRID_STEPS {
            if values[i + 1][j] > values[i][j] {
                fails.push(format!("d_sigma = {}: rises at d_mu = {}", grid_value(j), grid_value(i)));
            }
        }
    }
    check("(c) non-increasing in d_mu", fails);

    let mut fails = Vec::new();
    for (i, row) in values.iter().enumerate() {
        for j in 0..GRID_STEPS {
            if row[j + 1] < row[j] {
                fails.push(format!("d_mu = {}: falls at d_sigma = {}", grid_value(i), grid_value(j)));
            }
        }
    }
    check("(d) non-decreasing in d_sigma", fails);

    let mut fails = Vec::new();
    for i in 0..GRID_STEPS {
        for j in 0..GRID_STEPS {
            let mixed = (values[i + 1][j + 1] - values[i + 1][j]) - (values[i][j + 1] - values[i][j]);
            if mixed > 0.0 {
                fails.push(format!("mixed difference {mixed:e} at ({}, {})", grid_value(i), grid_value(j)));
            }
        }
    }
    check("(e) d_sigma slope non-increasing in d_mu", fails);

    let corners = [(0, 0), (0, GRID_STEPS), (GRID_STEPS, 0), (GRID_STEPS, GRID_STEPS)]
        .into_iter()
        .map(|(i, j)| (grid_value(i), grid_value(j), values[i][j]))
        .collect();
    let passes = checks.iter().all(|c| c.passed);
    Ok(GridReport {
        corners,
        properties: checks,
        passes,
    })
}

// ---------------------------------------------------------------------------
// full verification run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConcentrationConfig {
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub d: usize,
    pub rng_seed: u64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            epsilons: vec![0.5, 0.1, 0.01],
            trials: 1000,
            d: 16,
            rng_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub slack: f64,
    /// Relative tolerance on `E[S(H)]` against `c d (n-1)/n`.
    pub spread_tolerance: f64,
    pub layer_bound: Vec<SyntheticConfig>,
    pub concentration_bound: ConcentrationConfig,
    pub trace_bound: Vec<TraceBoundCase>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let base = SyntheticConfig::default();
        VerifyConfig {
            slack: DEFAULT_SLACK,
            spread_tolerance: 0.02,
            layer_bound: vec![
                base.clone(),
                SyntheticConfig {
                    transform: Transform::UniformScale { s: 2.5 },
                    ..base.clone()
                },
                SyntheticConfig {
                    attention: AttentionKind::Uniform,
                    ..base.clone()
                },
                SyntheticConfig {
                    transform: Transform::Layernorm { gamma: 1.0, beta: 0.0 },
                    ..base
                },
            ],
            concentration_bound: ConcentrationConfig::default(),
            trace_bound: vec![
                TraceBoundCase { n: 2, d: 16, gamma: 1.0, beta: 0.0, target_cos: 1.0 / 3.0, seed: 1 },
                TraceBoundCase { n: 10, d: 32, gamma: 1.0, beta: 0.0, target_cos: 1.0 / 3.0, seed: 2 },
                TraceBoundCase { n: 100, d: 128, gamma: 1.0, beta: 0.0, target_cos: 1.0 / 3.0, seed: 3 },
                TraceBoundCase { n: 20, d: 64, gamma: 0.8, beta: 0.3, target_cos: 0.6, seed: 4 },
                TraceBoundCase { n: 5, d: 16, gamma: 1.0, beta: 0.0, target_cos: 1.0, seed: 5 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub grid: GridReport,
    pub layer_bound: Vec<BoundReport>,
    pub concentration_bound: Vec<ConcentrationReport>,
    pub trace_bound: Vec<TraceBoundReport>,
    pub passes: bool,
    pub rng_algorithm: String,
}

pub fn run_verification(cfg: &VerifyConfig) -> Result<VerificationReport> {
    let grid = property_grid()?;
    let layer_bound = cfg
        .layer_bound
        .iter()
        .map(|c| verify_layer_bound(c, cfg.slack))
        .collect::<Result<Vec<_>>>()?;
    let cb = &cfg.concentration_bound;
    let concentration_bound = cb
        .epsilons
        .iter()
        .map(|&eps| verify_concentration_bound(eps, cb.trials, cb.d, cb.rng_seed))
        .collect::<Result<Vec<_>>>()?;
    let trace_bound = cfg
        .trace_bound
        .iter()
        .map(verify_trace_bound)
        .collect::<Result<Vec<_>>>()?;

    let layer_ok = layer_bound.iter().all(|b| {
        b.contraction_holds && b.spread_h_rel_error <= cfg.spread_tolerance && (!b.gating || b.holds)
    });
    let passes = grid.passes
        && layer_ok
        && concentration_bound.iter().all(|t| t.passes)
        && trace_bound.iter().all(|t| t.holds);
    Ok(VerificationReport {
        grid,
        layer_bound,
        concentration_bound,
        trace_bound,
        passes,
        rng_algorithm: RNG_ALGORITHM.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(trials: usize) -> SyntheticConfig {
        SyntheticConfig {
            trials,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SyntheticConfig { n: 1, ..small(1) }.validate().is_err());
        assert!(SyntheticConfig { c: 0.0, ..small(1) }.validate().is_err());
        assert!(SyntheticConfig { eta: vec![0.0; 8], ..small(1) }.validate().is_err());
        assert!(SyntheticConfig { eta: vec![1.0; 3], ..small(1) }.validate().is_err());
        assert!(SyntheticConfig { trials: 0, ..small(1) }.validate().is_err());
        assert!(SyntheticConfig {
            transform: Transform::UniformScale { s: -1.0 },
            ..small(1)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn attention_is_row_stochastic() {
        let a = attention_matrix(AttentionKind::RandomSoftmax, 6, 3);
        for row in a.row_iter() {
            assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn rescale_reaches_lambda_below_one() {
        let cfg = SyntheticConfig {
            projection_scale: 50.0,
            ..small(1)
        };
        let layer = SyntheticLayer::generate(&cfg).unwrap();
        assert!(layer.lambda < 1.0);
        assert!(layer.projection_scale < 50.0);

        let stuck = SyntheticConfig {
            projection_scale: 1e6,
            max_rescale: 2,
            ..small(1)
        };
        assert!(matches!(SyntheticLayer::generate(&stuck), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_noise_collapses_h() {
        let cfg = SyntheticConfig { c: 1e-12, ..small(5) };
        let (_, trials) = simulate_layer(&cfg).unwrap();
        for t in &trials {
            assert!(spread(&t.h) < 1e-9);
            for col in t.h.column_iter() {
                assert!((col - DVector::from_column_slice(&cfg.eta)).norm() < 1e-4);
            }
        }
    }

    #[test]
    fn identity_transform_passes_y_through() {
        let (_, trials) = simulate_layer(&small(3)).unwrap();
        for t in &trials {
            assert_eq!(t.x, t.y);
            assert_eq!(t.y, &t.z + &t.h);
        }
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let (_, a) = simulate_layer(&small(4)).unwrap();
        let (_, b) = simulate_layer(&small(4)).unwrap();
        assert_eq!(a, b);
        let (_, c) = simulate_layer(&SyntheticConfig { rng_seed: 43, ..small(4) }).unwrap();
        assert_ne!(a[0].h, c[0].h);
    }

    #[test]
    fn expected_spread_of_h() {
        let r = verify_layer_bound(&small(10_000), DEFAULT_SLACK).unwrap();
        assert_relative_eq!(r.expected_spread_h, 0.5 * 8.0 * 7.0 / 8.0);
        assert!(r.spread_h_rel_error < 0.02, "{}", r.spread_h_rel_error);
    }

    #[test]
    fn uniform_attention_has_zero_lambda() {
        let cfg = SyntheticConfig {
            attention: AttentionKind::Uniform,
            ..small(2000)
        };
        let r = verify_layer_bound(&cfg, DEFAULT_SLACK).unwrap();
        assert!(r.lambda < 1e-20);
        assert_relative_eq!(r.rhs, r.c_estimate * r.r, max_relative = 1e-9);
        assert!(r.holds);
    }

    #[test]
    fn identity_transform_has_unit_c() {
        let r = verify_layer_bound(&small(10_000), DEFAULT_SLACK).unwrap();
        assert_relative_eq!(r.c_estimate, 1.0, max_relative = 1e-12);
        assert!(r.lhs <= (1.0 + r.lambda.sqrt()).powi(2) * r.r * 1.05);
        assert!(r.holds && r.contraction_holds);
    }

    #[test]
    fn r_scales_with_noise_variance() {
        let hi = verify_layer_bound(&small(4000), DEFAULT_SLACK).unwrap();
        let lo = verify_layer_bound(&SyntheticConfig { c: 0.05, ..small(4000) }, DEFAULT_SLACK).unwrap();
        let ratio = hi.r / lo.r;
        assert!((8.5..11.5).contains(&ratio), "r ratio {ratio}");
    }

    #[test]
    fn concentration_bound_small_run() {
        let r = verify_concentration_bound(0.1, 200, 16, 3).unwrap();
        assert!(r.passes);
        assert!(r.max_socm < 0.05);
        assert!(r.max_concentration < 0.1);
        assert_eq!(r.point_mass_socm, 0.0);
        let mut prev = 0.0;
        for p in &r.adversarial {
            assert!(p.socm < 0.05 && p.socm > prev);
            assert_relative_eq!(p.socm, 0.1 * (1.0 - p.delta) / 2.0, max_relative = 1e-9);
            prev = p.socm;
        }
    }

    #[test]
    fn concentrated_list_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = concentrated_list(10, 6, 0.02, &mut rng).unwrap();
        assert_relative_eq!(concentration(&x).unwrap(), 0.02, max_relative = 1e-9);
    }

    #[test]
    fn trace_formula_values() {
        assert_relative_eq!(trace_bound_formula(2, 1.0 / 3.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(trace_bound_formula(100, 1.0 / 3.0), 2.0 * 99.0 / 102.0, epsilon = 1e-12);
        assert_eq!(trace_bound_formula(7, 1.0), 0.0);
    }

    #[test]
    fn trace_bound_cases() {
        for case in VerifyConfig::default().trace_bound {
            let r = verify_trace_bound(&case).unwrap();
            assert!(r.holds, "{r:?}");
            assert!((r.realized_cos - case.target_cos).abs() <= COSINE_TOL);
            assert!(r.below_two);
        }
        let n2 = verify_trace_bound(&TraceBoundCase { n: 2, d: 8, gamma: 1.0, beta: 0.0, target_cos: 1.0 / 3.0, seed: 0 }).unwrap();
        assert!((n2.trace - 0.5).abs() <= 1e-3);
    }

    #[test]
    fn trace_bound_infeasible() {
        // with beta = gamma every pair has cosine >= 1/2
        let case = TraceBoundCase { n: 4, d: 16, gamma: 1.0, beta: 1.0, target_cos: 0.2, seed: 0 };
        assert!(matches!(verify_trace_bound(&case), Err(Error::Generator(_))));
        let case = TraceBoundCase { n: 20, d: 10, gamma: 1.0, beta: 0.0, target_cos: 0.5, seed: 0 };
        assert!(verify_trace_bound(&case).is_err());
    }

    #[test]
    fn grid_passes() {
        let g = property_grid().unwrap();
        assert!(g.passes, "{:?}", g.properties);
        assert_eq!(g.properties.len(), 5);
        assert_eq!(g.corners[1], (0.0, 1.0, 1.0));
        assert_eq!(g.corners[2].2, 0.0);
        assert_eq!(g.corners[3].2, 0.0);
    }

    #[test]
    fn verify_config_round_trips_json() {
        let cfg = VerifyConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: VerifyConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
        let partial: VerifyConfig = serde_json::from_str(r#"{"slack": 0.1}"#).unwrap();
        assert_eq!(partial.slack, 0.1);
        assert_eq!(partial.concentration_bound, ConcentrationConfig::default());
    }
}
