//! Kernel Flows: stochastic tuning of the kernel lengthscale.
//!
//! Each iteration draws random batches. A kernel PLS model fit on the whole
//! batch is compared against one fit on a random half of it, both predicting
//! the whole batch:
//!
//! ```text
//! ρ = ‖ŷ_full − ŷ_half‖² / ‖ŷ_full − ȳ‖²
//! ```
//!
//! A lengthscale whose kernel generalises from half the data to all of it
//! makes ρ small. The gradient in `log ℓ` comes from central differences on
//! the same batches, and the update uses Polyak momentum.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kpls::dual_simpls;
use super::{sq_dists_self, KernelCentering, KernelFamily, KernelSpec};
use crate::error::{Error, Result};
use crate::pls::{encode_da, r_squared};

/// Lengthscales are kept within these multiples of the median pairwise
/// distance.
pub const CLAMP_LOW: f64 = 1e-4;
pub const CLAMP_HIGH: f64 = 1e4;

const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KfConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub subsamplings_per_iter: usize,
    pub batch_ratio: f64,
    pub seed: u64,
    /// Central-difference step in `log ℓ`.
    pub fd_step: f64,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            iterations: 150,
            subsamplings_per_iter: 20,
            batch_ratio: 0.5,
            seed: 0,
            fd_step: 1e-4,
        }
    }
}

impl KfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.batch_ratio > 0.0 && self.batch_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "batch_ratio must lie in (0, 1), got {}",
                self.batch_ratio
            )));
        }
        if self.iterations == 0 || self.subsamplings_per_iter == 0 {
            return Err(Error::invalid("iterations and subsamplings must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1.0) {
            return Err(Error::invalid("fd_step must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfTraceRow {
    pub iteration: usize,
    /// Mean ρ over the iteration's batches, before the update.
    pub mean_rho: f64,
    /// Lengthscale at which `mean_rho` was measured.
    pub lengthscale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfOutcome {
    pub spec: KernelSpec,
    pub a_star: usize,
    pub trace: Vec<KfTraceRow>,
    /// Full-data training R² for each latent count tried.
    pub r2_by_a: Vec<(usize, f64)>,
}

impl KfOutcome {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,mean_rho,lengthscale\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{:e},{:e}", r.iteration, r.mean_rho, r.lengthscale);
        }
        out
    }
}

/// A batch and the half of it used for the reduced model. `half` holds
/// positions inside `batch`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KfBatch {
    pub batch: Vec<usize>,
    pub half: Vec<usize>,
}

/// Distances and responses for one batch, computed once and reused for
/// every lengthscale evaluated on it.
struct BatchCache {
    d2_batch: Array2<f64>,
    d2_half: Array2<f64>,
    d2_cross: Array2<f64>,
    y_batch: Array2<f64>,
    y_half: Array2<f64>,
}

impl BatchCache {
    fn new(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, b: &KfBatch) -> Self {
        let xb = x.select(Axis(0), &b.batch);
        let d2_batch = sq_dists_self(xb.view());
        let d2_half = d2_batch.select(Axis(0), &b.half).select(Axis(1), &b.half);
        let d2_cross = d2_batch.select(Axis(1), &b.half);
        let y_batch = y.select(Axis(0), &b.batch);
        let y_half = y_batch.select(Axis(0), &b.half);
        Self {
            d2_batch,
            d2_half,
            d2_cross,
            y_batch,
            y_half,
        }
    }

    fn rho(&self, spec: &KernelSpec, a: usize) -> Result<f64> {
        let full = fit_predict(spec, &self.d2_batch, &self.y_batch, &self.d2_batch, a)?;
        let half = fit_predict(spec, &self.d2_half, &self.y_half, &self.d2_cross, a)?;
        let ybar = self.y_batch.mean_axis(Axis(0)).expect("non-empty batch");
        let mut num = 0.0;
        let mut den = 0.0;
        for ((f, h), row) in full
            .axis_iter(Axis(0))
            .zip(half.axis_iter(Axis(0)))
            .zip(std::iter::repeat(&ybar))
        {
            for k in 0..f.len() {
                num += (f[k] - h[k]).powi(2);
                den += (f[k] - row[k]).powi(2);
            }
        }
        let rho = num / den;
        if !rho.is_finite() {
            return Err(Error::NonFinite(format!(
                "Kernel Flows loss at lengthscale {}",
                spec.lengthscale
            )));
        }
        Ok(rho)
    }
}

/// Fit on the training distances, predict rows of the cross distances.
fn fit_predict(
    spec: &KernelSpec,
    d2_train: &Array2<f64>,
    y: &Array2<f64>,
    d2_cross: &Array2<f64>,
    a: usize,
) -> Result<Array2<f64>> {
    let k = spec.from_sq_dists(d2_train);
    let stats = KernelCentering::fit(&k)?;
    let kc = stats.center(&k)?;
    let y_means = y.mean_axis(Axis(0)).expect("non-empty");
    let y0 = y - &y_means;
    let factors = dual_simpls(&kc, &y0, a.min(k.nrows() - 1));
    let d = factors.coefficients(a);
    let kx = stats.center(&spec.from_sq_dists(d2_cross))?;
    Ok(kx.dot(&d) + &y_means)
}

/// ρ for one batch at the given kernel.
pub fn kf_loss(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    spec: &KernelSpec,
    batch: &KfBatch,
    a: usize,
) -> Result<f64> {
    spec.validate()?;
    let enc = encode_da(labels)?;
    check_batch(x.nrows(), batch)?;
    BatchCache::new(x, enc.indicators().view(), batch).rho(spec, a)
}

/// Mean ρ and its central-difference derivative with respect to `log ℓ`,
/// averaged over `batches`.
pub fn kf_gradient(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    spec: &KernelSpec,
    batches: &[KfBatch],
    a: usize,
    step: f64,
) -> Result<(f64, f64)> {
    spec.validate()?;
    let enc = encode_da(labels)?;
    for b in batches {
        check_batch(x.nrows(), b)?;
    }
    let caches: Vec<BatchCache> = batches
        .par_iter()
        .map(|b| BatchCache::new(x, enc.indicators().view(), b))
        .collect();
    gradient_on(&caches, spec, a, step)
}

fn gradient_on(caches: &[BatchCache], spec: &KernelSpec, a: usize, step: f64) -> Result<(f64, f64)> {
    if caches.is_empty() {
        return Err(Error::invalid("no batches"));
    }
    let theta = spec.lengthscale.ln();
    let up = spec.with_lengthscale((theta + step).exp());
    let down = spec.with_lengthscale((theta - step).exp());
    let per_batch: Vec<Result<(f64, f64)>> = caches
        .par_iter()
        .map(|c| {
            let r0 = c.rho(spec, a)?;
            let g = (c.rho(&up, a)? - c.rho(&down, a)?) / (2.0 * step);
            Ok((r0, g))
        })
        .collect();
    // fixed-order reduction keeps results independent of thread scheduling
    let mut rho = 0.0;
    let mut grad = 0.0;
    for r in per_batch {
        let (r0, g) = r?;
        rho += r0;
        grad += g;
    }
    let m = caches.len() as f64;
    Ok((rho / m, grad / m))
}

fn check_batch(n: usize, b: &KfBatch) -> Result<()> {
    if b.batch.len() < 3 || b.half.len() < 2 || b.half.len() >= b.batch.len() {
        return Err(Error::invalid("batch needs at least 3 rows and a half of at least 2"));
    }
    if b.batch.iter().any(|&i| i >= n) || b.half.iter().any(|&i| i >= b.batch.len()) {
        return Err(Error::invalid("batch index out of range"));
    }
    Ok(())
}

/// Median Euclidean distance over all distinct row pairs.
pub fn median_pairwise_distance(x: ArrayView2<'_, f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("median distance needs at least 2 rows"));
    }
    let d2 = sq_dists_self(x);
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            d.push(d2[[i, j]].sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if !(med > 0.0) {
        return Err(Error::invalid("degenerate kernel: median pairwise distance is zero"));
    }
    Ok(med)
}

/// Draws a batch whose half contains every class.
pub(crate) fn draw_batch(
    rng: &mut ChaCha8Rng,
    labels: &[u8],
    classes: &[u8],
    ratio: f64,
) -> Result<KfBatch> {
    let n = labels.len();
    let nb = ((ratio * n as f64).round() as usize).clamp(3, n);
    let nh = nb / 2;
    let mut pool: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_RESAMPLES {
        let (chosen, _) = pool.partial_shuffle(rng, nb);
        let batch = chosen.to_vec();
        let complete = classes
            .iter()
            .all(|c| batch[..nh].iter().any(|&i| labels[i] == *c));
        if complete {
            return Ok(KfBatch {
                batch,
                half: (0..nh).collect(),
            });
        }
    }
    Err(Error::invalid(
        "could not draw a half-batch containing every class; classes too unbalanced",
    ))
}

/// Full-data training R² for each `a` in `a_grid`, from one nested fit.
pub fn r2_by_latent_count(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    spec: &KernelSpec,
    a_grid: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let enc = encode_da(labels)?;
    let n = x.nrows();
    let grid: Vec<usize> = a_grid.iter().copied().filter(|&a| a >= 1 && a < n).collect();
    let Some(&a_max) = grid.iter().max() else {
        return Err(Error::invalid("no latent count in the grid fits the data"));
    };
    let d2 = sq_dists_self(x);
    let k = spec.from_sq_dists(&d2);
    let stats = KernelCentering::fit(&k)?;
    let kc = stats.center(&k)?;
    let y = enc.indicators();
    let y_means = y.mean_axis(Axis(0)).expect("non-empty");
    let y0 = y - &y_means;
    let factors = dual_simpls(&kc, &y0, a_max);
    Ok(grid
        .iter()
        .map(|&a| {
            let fitted = kc.dot(&factors.coefficients(a)) + &y_means;
            (a, r_squared(y.view(), fitted.view()))
        })
        .collect())
}

/// Smallest latent count whose R² is within 1% of the best.
fn pick_a(r2: &[(usize, f64)]) -> usize {
    let best = r2
        .iter()
        .map(|p| p.1)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = r2.to_vec();
    sorted.sort_by_key(|p| p.0);
    sorted
        .iter()
        .find(|(_, v)| *v >= best - 0.01 * best.abs())
        .map(|p| p.0)
        .unwrap_or(sorted[0].0)
}

pub fn kf_optimize(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    spec0: &KernelSpec,
    cfg: &KfConfig,
    a_grid: &[usize],
) -> Result<KfOutcome> {
    cfg.validate()?;
    spec0.validate()?;
    if spec0.family == KernelFamily::Linear {
        return Err(Error::invalid("the linear kernel has no lengthscale to tune"));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Dimension {
            context: "Kernel Flows labels",
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Kernel Flows input".into()));
    }
    let enc = encode_da(labels)?;
    let n = x.nrows();
    let nb = ((cfg.batch_ratio * n as f64).round() as usize).clamp(3, n);
    let nh = nb / 2;
    let a_inner = a_grid
        .iter()
        .copied()
        .filter(|&a| a >= 1 && a < nh)
        .max()
        .ok_or_else(|| Error::invalid(format!("no latent count in the grid fits a half-batch of {nh}")))?;

    let med = median_pairwise_distance(x)?;
    let (lo, hi) = ((CLAMP_LOW * med).ln(), (CLAMP_HIGH * med).ln());
    let mut theta = spec0.lengthscale.ln().clamp(lo, hi);
    let mut velocity = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y = enc.indicators().view();
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let mut batches = Vec::with_capacity(cfg.subsamplings_per_iter);
        for _ in 0..cfg.subsamplings_per_iter {
            batches.push(draw_batch(&mut rng, labels, enc.classes(), cfg.batch_ratio)?);
        }
        let caches: Vec<BatchCache> = batches.par_iter().map(|b| BatchCache::new(x, y, b)).collect();
        let spec = spec0.with_lengthscale(theta.exp());
        let (rho, grad) = gradient_on(&caches, &spec, a_inner, cfg.fd_step)?;
        trace.push(KfTraceRow {
            iteration: it,
            mean_rho: rho,
            lengthscale: spec.lengthscale,
        });
        velocity = cfg.momentum * velocity - cfg.learning_rate * grad;
        let next = theta + velocity;
        if next < lo || next > hi {
            log::warn!(
                "Kernel Flows lengthscale {:.4e} hit the clamp range [{:.4e}, {:.4e}]",
                next.exp(),
                lo.exp(),
                hi.exp()
            );
            velocity = 0.0;
        }
        theta = next.clamp(lo, hi);
        log::debug!("KF iteration {it}: rho {rho:.6} lengthscale {:.6}", spec.lengthscale);
    }

    let spec = spec0.with_lengthscale(theta.exp());
    let r2 = r2_by_latent_count(x, labels, &spec, a_grid)?;
    let a_star = pick_a(&r2);
    Ok(KfOutcome {
        spec,
        a_star,
        trace,
        r2_by_a: r2,
    })
}
