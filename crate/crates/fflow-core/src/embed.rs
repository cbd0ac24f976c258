//! LFI maximization: a ladder of random nonlinear embeddings into growing
//! dimension until the estimated LFI plateaus, yielding the FI estimate.
//!
//! Each stage draws a fresh d'×d Gaussian projection A, maps every data row
//! through x ↦ φ(Ax) + ε with a componentwise leaky nonlinearity φ and i.i.d.
//! regularizer noise ε, and evaluates the bias-corrected LFI of the embedded
//! triplet. The ladder stops when the spread of the last three values drops
//! below κ times the spread of the first three, exits early when the first
//! three stages stay within a fraction γ of the base LFI, and never reports
//! a value below the base LFI of the raw data.
//!
//! Stage evaluation streams the embedded data in fixed-size row chunks, so
//! results are bitwise reproducible for a fixed seed regardless of the
//! worker-pool size, and the d'×d' covariance is the only large allocation.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfi::{self, FiEstimate, FiMethod, TripletSample};
use crate::scalar::Scalar;
use crate::seed;
use crate::stats::{self, SampleMatrix};
use crate::{Matrix, Real, Vector, DEFAULT_REL_TOL};

/// Rows per streaming chunk. Fixed so that noise streams and reduction order
/// do not depend on the worker-pool size.
const CHUNK_ROWS: usize = 4096;
/// Number of independent accumulators the chunks are partitioned into.
const SUPER_BLOCKS: usize = 8;
/// Ladder guard: stop climbing once the predicted relative standard error of
/// the next stage would reach this value (the error model requires η(L) ≪ 1).
const GUARD_REL_STD: Real = 0.25;

/// Parameters of the maximization ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedConfig {
    /// Dimension increment Δd per stage.
    pub delta_d: usize,
    /// Convergence factor κ of the spread rule.
    pub kappa: Real,
    /// Early-exit fraction γ.
    pub gamma: Real,
    /// Standard deviation of the additive regularizer noise ε.
    pub sigma_noise: Real,
    /// Slope of the leaky nonlinearity for x ≤ 0.
    pub alpha: Real,
    /// Safety cap on d'. `None` means d + 40·Δd.
    pub max_dim: Option<usize>,
    /// Seed of the embedding streams.
    pub seed: u64,
    /// Average the trace over a sliding window of 3 dims before applying the
    /// κ rule (for jagged traces). Off by default.
    pub smooth: bool,
    /// Relative eigenvalue cutoff of the pseudoinverse, raw and embedded.
    pub rel_tol: Real,
}

impl EmbedConfig {
    /// Defaults used throughout the FI-flow analyses: Δd=30, κ=0.1, γ=0.05,
    /// σ_noise=0.01, α=0.7.
    pub fn new(seed: u64) -> Self {
        Self {
            delta_d: 30,
            kappa: 0.1,
            gamma: 0.05,
            sigma_noise: 0.01,
            alpha: 0.7,
            max_dim: None,
            seed,
            smooth: false,
            rel_tol: DEFAULT_REL_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_d < 1 {
            return Err(Error::InvalidParameter {
                name: "delta_d",
                value: self.delta_d as f64,
                expected: ">= 1",
            });
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidParameter {
                name: "kappa",
                value: self.kappa,
                expected: "in (0, 1)",
            });
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: self.gamma,
                expected: "in (0, 1)",
            });
        }
        if self.sigma_noise < 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma_noise",
                value: self.sigma_noise,
                expected: ">= 0",
            });
        }
        Ok(())
    }

    fn max_dim_for(&self, d: usize) -> usize {
        self.max_dim.unwrap_or(d + 40 * self.delta_d)
    }
}

/// Outcome of the maximization ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    EarlyExitFlat,
    FallbackBaseLfi,
    NotConverged,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Converged => "converged",
            Verdict::EarlyExitFlat => "early_exit_flat",
            Verdict::FallbackBaseLfi => "fallback_base_lfi",
            Verdict::NotConverged => "not_converged",
        };
        f.write_str(s)
    }
}

/// Trace of one maximization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaximizationTrace {
    /// Embedded dimensions d' per stage, strictly increasing.
    pub dims: Vec<usize>,
    /// Corrected LFI estimate per stage.
    pub estimates: Vec<FiEstimate>,
    /// Corrected LFI of the raw (un-embedded) data.
    pub base: FiEstimate,
    pub verdict: Verdict,
    /// Chosen FI estimate, method = maximized.
    pub final_estimate: FiEstimate,
}

impl MaximizationTrace {
    /// Stage LFI values (clamped).
    pub fn lfi_values(&self) -> Vec<Real> {
        self.estimates.iter().map(|e| e.value).collect()
    }

    /// CSV export with columns `d_prime, lfi, rel_std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d_prime,lfi,rel_std\n");
        for (d, e) in self.dims.iter().zip(&self.estimates) {
            out.push_str(&format!("{},{},{}\n", d, e.value, e.rel_std));
        }
        out
    }
}

/// d'×d matrix with i.i.d. standard normal entries drawn from the stream of
/// `seed`. Repeat calls with the same arguments return the same matrix.
pub fn random_projection(d: usize, d_prime: usize, seed: u64) -> Matrix {
    let mut rng = seed::rng(seed, "projection", 0);
    let entries: Vec<Real> = (0..d * d_prime)
        .map(|_| rng.sample::<Real, _>(StandardNormal))
        .collect();
    // Column-major fill; the layout is part of the determinism contract.
    Matrix::from_vec(d_prime, d, entries)
}

/// Leaky componentwise nonlinearity: x for x > 0, α·x otherwise.
pub fn nonlinearity<T: Scalar>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x
    }
}

/// Tags separating the noise streams of the three triplet members.
#[derive(Clone, Copy)]
enum Member {
    Minus,
    Center,
    Plus,
}

impl Member {
    fn tag(self) -> &'static str {
        match self {
            Member::Minus => "noise-minus",
            Member::Center => "noise-center",
            Member::Plus => "noise-plus",
        }
    }
}

/// Embed one chunk of rows: φ(X·Aᵀ) + ε with the chunk's own noise stream.
fn embed_chunk(
    rows: nalgebra::DMatrixView<'_, Real>,
    a_t: &Matrix,
    alpha: Real,
    sigma_noise: Real,
    stage_seed: u64,
    member: Member,
    chunk_idx: u64,
) -> Matrix {
    let mut out = rows * a_t;
    for v in out.iter_mut() {
        *v = nonlinearity(*v, alpha);
    }
    if sigma_noise > 0.0 {
        let mut rng = seed::rng(stage_seed, member.tag(), chunk_idx);
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] += sigma_noise * rng.sample::<Real, _>(StandardNormal);
            }
        }
    }
    out
}

/// Chunk ranges of a member with `n` rows.
fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK_ROWS))
        .map(|c| {
            let start = c * CHUNK_ROWS;
            (start, CHUNK_ROWS.min(n - start))
        })
        .collect()
}

/// Apply the embedding of a stage to a whole triplet, materializing the
/// result. θ and Δθ are unchanged; the output dimension is A's row count.
pub fn embed_triplet(
    t: &TripletSample,
    a: &Matrix,
    cfg: &EmbedConfig,
    stage_seed: u64,
) -> Result<TripletSample> {
    cfg.validate()?;
    if a.ncols() != t.d() {
        return Err(Error::DimensionMismatch {
            context: "embed_triplet projection columns",
            left: a.ncols(),
            right: t.d(),
        });
    }
    let a_t = a.transpose();
    let embed_member = |s: &SampleMatrix, member: Member| -> Result<SampleMatrix> {
        let n = s.n_samples();
        let mut out = Matrix::zeros(n, a.nrows());
        for (c, (start, len)) in chunk_ranges(n).into_iter().enumerate() {
            let chunk = embed_chunk(
                s.data().rows(start, len),
                &a_t,
                cfg.alpha,
                cfg.sigma_noise,
                stage_seed,
                member,
                c as u64,
            );
            out.rows_mut(start, len).copy_from(&chunk);
        }
        SampleMatrix::new(out)
    };
    TripletSample::new(
        embed_member(t.minus(), Member::Minus)?,
        embed_member(t.center(), Member::Center)?,
        embed_member(t.plus(), Member::Plus)?,
        t.theta(),
        t.delta_theta(),
    )
}

/// Partial moment accumulator of one super-block of chunks.
struct BlockMoments {
    sum: Vector,
    outer: Option<Matrix>,
    rows: usize,
}

/// Column means (and optionally the covariance) of the embedded member,
/// streamed in fixed chunks. Chunks are partitioned into a fixed number of
/// super-blocks evaluated in parallel; partials are folded in block order so
/// the result does not depend on the thread count.
fn embedded_moments(
    s: &SampleMatrix,
    a_t: &Matrix,
    cfg: &EmbedConfig,
    stage_seed: u64,
    member: Member,
    with_gram: bool,
) -> (Vector, Option<Matrix>) {
    let n = s.n_samples();
    let d_prime = a_t.ncols();
    let chunks = chunk_ranges(n);
    let blocks: Vec<Vec<(usize, (usize, usize))>> = (0..SUPER_BLOCKS)
        .map(|b| {
            chunks
                .iter()
                .enumerate()
                .filter(|(c, _)| c % SUPER_BLOCKS == b)
                .map(|(c, r)| (c, *r))
                .collect()
        })
        .collect();

    let partials: Vec<BlockMoments> = blocks
        .into_par_iter()
        .map(|block| {
            let mut sum = Vector::zeros(d_prime);
            let mut outer = with_gram.then(|| Matrix::zeros(d_prime, d_prime));
            let mut rows = 0;
            for (c, (start, len)) in block {
                let y = embed_chunk(
                    s.data().rows(start, len),
                    a_t,
                    cfg.alpha,
                    cfg.sigma_noise,
                    stage_seed,
                    member,
                    c as u64,
                );
                for j in 0..d_prime {
                    sum[j] += y.column(j).sum();
                }
                if let Some(acc) = outer.as_mut() {
                    let y_t = y.transpose();
                    acc.gemm(1.0, &y_t, &y, 1.0);
                }
                rows += len;
            }
            BlockMoments { sum, outer, rows }
        })
        .collect();

    let mut sum = Vector::zeros(d_prime);
    let mut outer = with_gram.then(|| Matrix::zeros(d_prime, d_prime));
    let mut rows = 0;
    for p in partials {
        sum += p.sum;
        if let (Some(acc), Some(part)) = (outer.as_mut(), p.outer) {
            *acc += part;
        }
        rows += p.rows;
    }
    debug_assert_eq!(rows, n);
    let mean = sum / n as Real;
    let cov = outer.map(|gram| {
        let mut cov = (gram - (&mean * mean.transpose()) * n as Real) / (n - 1) as Real;
        stats::symmetrize(&mut cov);
        cov
    });
    (mean, cov)
}

/// Corrected LFI of the embedded triplet at one stage, without materializing
/// the embedded data.
fn stage_estimate(
    t: &TripletSample,
    a: &Matrix,
    cfg: &EmbedConfig,
    stage_seed: u64,
) -> Result<FiEstimate> {
    let a_t = a.transpose();
    let d_prime = a.nrows();
    let (mean_plus, _) = embedded_moments(t.plus(), &a_t, cfg, stage_seed, Member::Plus, false);
    let (mean_minus, _) = embedded_moments(t.minus(), &a_t, cfg, stage_seed, Member::Minus, false);
    let (_, cov) = embedded_moments(t.center(), &a_t, cfg, stage_seed, Member::Center, true);
    let cov = cov.expect("gram requested");
    let pinv = stats::pca_pseudoinverse(&cov, cfg.rel_tol)?;
    let grad = stats::central_difference(&mean_plus, &mean_minus, t.delta_theta())?;
    let q = lfi::quadratic_form(&grad, &pinv);
    let raw = q - lfi::bias_term(d_prime, t.n_offset(), t.spacing());
    let scale = if raw > 0.0 { raw } else { q };
    let rel_std = if scale > 0.0 {
        lfi::lfi_rel_std(scale, d_prime, t.n_offset(), t.spacing())?
    } else {
        0.0
    };
    Ok(FiEstimate {
        value: raw.max(0.0),
        raw_value: raw,
        rel_std,
        method: FiMethod::Corrected,
    })
}

fn spread(values: &[Real]) -> Real {
    let max = values.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let min = values.iter().cloned().fold(Real::INFINITY, Real::min);
    max - min
}

/// Sliding mean over a window of up to 3 values ending at each index.
fn smooth3(values: &[Real]) -> Vec<Real> {
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = i.saturating_sub(2);
            let w = &values[lo..=i];
            w.iter().sum::<Real>() / w.len() as Real
        })
        .collect()
}

/// Run the LFI maximization ladder on a triplet.
///
/// The base corrected LFI J₀ of the raw data is computed first; stages then
/// embed into d' = d + k·Δd with a fresh projection per stage. Termination:
///
/// - κ rule: spread of the last three values < κ × spread of the first three
///   → `Converged`, final = mean of the last three;
/// - γ rule, checked once after three stages: total increase over J₀ below
///   γ·J₀ → `EarlyExitFlat`, final = mean of the first three;
/// - cap: next d' would exceed `max_dim`, or the predicted relative standard
///   error at the next d' would reach 0.25 → `NotConverged`, final = last
///   stage value (base LFI when no stage ran).
///
/// In all cases a final below J₀ falls back to the base LFI with verdict
/// `FallbackBaseLfi`.
pub fn maximize_lfi(t: &TripletSample, cfg: &EmbedConfig) -> Result<MaximizationTrace> {
    cfg.validate()?;
    let d = t.d();
    let n = t.n_offset();
    let s = t.spacing();
    if n < d + 2 {
        return Err(Error::InsufficientSample {
            got: n,
            required: d + 2,
            context: "per offset to estimate the covariance",
        });
    }
    let base = lfi::lfi_corrected(t, cfg.rel_tol)?;
    let j0 = base.value;
    let max_dim = cfg.max_dim_for(d);

    let mut dims: Vec<usize> = Vec::new();
    let mut estimates: Vec<FiEstimate> = Vec::new();

    let mut k = 1usize;
    let (mut verdict, final_value) = loop {
        let d_k = d + k * cfg.delta_d;
        if d_k > max_dim {
            break (Verdict::NotConverged, None);
        }
        // Ladder guard: do not climb into dimensions where the error model
        // predicts an unusable estimate at the best FI scale seen so far. A
        // scale counts only once it is distinguishable from zero, i.e. above
        // three times the absolute noise floor √(8·dim)/(n·s²) of a zero-FI
        // estimate; otherwise the scale is unknown (the vanishing-LFI case)
        // and the ladder keeps climbing.
        let noise_floor = |dim: usize| (8.0 * dim as Real).sqrt() / (n as Real * s * s);
        let j_ref = estimates
            .iter()
            .zip(&dims)
            .map(|(e, &dim)| (e.value, dim))
            .chain(std::iter::once((j0, d)))
            .filter(|&(v, dim)| v > 3.0 * noise_floor(dim))
            .map(|(v, _)| v)
            .fold(Real::NEG_INFINITY, Real::max);
        if j_ref > 0.0 {
            let predicted = lfi::lfi_rel_std(j_ref, d_k, n, s)?;
            if predicted >= GUARD_REL_STD {
                break (Verdict::NotConverged, None);
            }
        }
        let stage_seed = seed::derive_seed(cfg.seed, "stage", k as u64);
        let a = random_projection(d, d_k, seed::derive_seed(stage_seed, "proj", 0));
        let est = stage_estimate(t, &a, cfg, stage_seed)?;
        dims.push(d_k);
        estimates.push(est);

        let raw: Vec<Real> = estimates.iter().map(|e| e.value).collect();
        let working = if cfg.smooth { smooth3(&raw) } else { raw.clone() };

        if estimates.len() == 3 {
            let increase = working.iter().cloned().fold(Real::NEG_INFINITY, Real::max) - j0;
            if increase < cfg.gamma * j0 {
                break (Verdict::EarlyExitFlat, Some(raw.iter().sum::<Real>() / 3.0));
            }
        }
        if estimates.len() >= 4 {
            let first = spread(&working[..3]);
            let last = spread(&working[working.len() - 3..]);
            if last < cfg.kappa * first {
                break (
                    Verdict::Converged,
                    Some(raw[raw.len() - 3..].iter().sum::<Real>() / 3.0),
                );
            }
        }
        k += 1;
    };
    let final_value = final_value
        .or_else(|| estimates.last().map(|e| e.value))
        .unwrap_or(j0);
    let d_last = dims.last().copied().unwrap_or(d);
    let mut final_estimate = FiEstimate {
        value: final_value,
        raw_value: final_value,
        rel_std: if final_value > 0.0 {
            lfi::lfi_rel_std(final_value, d_last, n, s)?
        } else {
            0.0
        },
        method: FiMethod::Maximized,
    };
    if final_estimate.value < j0 {
        final_estimate = FiEstimate {
            value: j0,
            raw_value: base.raw_value,
            rel_std: base.rel_std,
            method: FiMethod::Maximized,
        };
        verdict = Verdict::FallbackBaseLfi;
    }

    Ok(MaximizationTrace {
        dims,
        estimates,
        base,
        verdict,
        final_estimate,
    })
}
