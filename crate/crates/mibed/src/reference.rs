//! Ground-truth oracles for the toy family: KDE-based likelihoods,
//! nested-Monte-Carlo reference mutual information for all four tasks,
//! quadrature reference posteriors, the analytic linear-Gaussian MI, and
//! the SNR / JS-divergence design diagnostics.
//!
//! The noise density of `ε + ν` has no closed form, so it is estimated once
//! by a Gaussian KDE of 50,000 draws (Silverman bandwidth). Likelihoods then
//! factorise over design coordinates,
//! `p̂(y|θ,m,d) = Π_j p̂_noise(y_j − θ0 − θ1 g_m(d_j))`,
//! and every reference quantity is built from that estimate.

use crate::error::{Error, Result};
use crate::task::{Goal, TaskSampler};
use crate::toy::{
    noise_sum_samples, response, sample_noise, sample_path_toy, sample_theta, ToyModel, ToyTask,
    ToyTheta,
};
use crate::util::{
    kahan_mean, linspace, log_mean_exp, mean_se, rng_from, simpson_weights, stream, KahanSum,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Monte-Carlo estimate with its standard error (outer-loop scatter only;
/// nested inner loops contribute bias that shrinks with their size).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

/// Gaussian-kernel density estimate of the summed observation noise, with a
/// log-density cache on a fine grid plus an exact tail fallback, so the
/// density is strictly positive everywhere.
pub struct KdeDensity {
    pub bandwidth: f64,
    pub n_samples: usize,
    grid_min: f64,
    grid_step: f64,
    log_cache: Vec<f64>,
    samples_sorted: Vec<f64>,
}

/// Default KDE sample count.
pub const KDE_SAMPLES: usize = 50_000;

const KDE_CACHE_POINTS: usize = 8_192;

/// Fits the noise KDE with Silverman's bandwidth.
pub fn fit_noise_kde(samples: &[f64]) -> Result<KdeDensity> {
    let n = samples.len();
    if n < 1_000 {
        return Err(Error::config(format!(
            "noise KDE needs at least 1,000 samples, got {n}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !sorted.first().unwrap().is_finite() || !sorted.last().unwrap().is_finite() {
        return Err(Error::numerical("non-finite noise samples"));
    }
    let mean = kahan_mean(&sorted);
    let sd = (sorted.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    let iqr = sorted[(3 * n) / 4] - sorted[n / 4];
    let spread = sd.min(iqr / 1.34).max(1e-12);
    let bandwidth = 0.9 * spread * (n as f64).powf(-0.2);

    let lo = sorted[0] - 8.0 * bandwidth;
    let hi = sorted[n - 1] + 8.0 * bandwidth;
    let step = (hi - lo) / (KDE_CACHE_POINTS - 1) as f64;

    // Linear binning followed by discrete convolution with the kernel.
    let mut bins = vec![0.0f64; KDE_CACHE_POINTS];
    for &x in &sorted {
        let pos = (x - lo) / step;
        let idx = pos.floor() as usize;
        let frac = pos - idx as f64;
        bins[idx] += 1.0 - frac;
        if idx + 1 < KDE_CACHE_POINTS {
            bins[idx + 1] += frac;
        }
    }
    let taps = ((8.0 * bandwidth) / step).ceil() as i64;
    let norm = 1.0 / (n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let kernel: Vec<f64> = (-taps..=taps)
        .map(|k| {
            let u = k as f64 * step / bandwidth;
            (-0.5 * u * u).exp() * norm
        })
        .collect();
    let mut log_cache = vec![0.0f64; KDE_CACHE_POINTS];
    for i in 0..KDE_CACHE_POINTS {
        let mut acc = 0.0;
        let k_lo = (-taps).max(i as i64 - (KDE_CACHE_POINTS as i64 - 1));
        let k_hi = taps.min(i as i64);
        for k in k_lo..=k_hi {
            acc += bins[(i as i64 - k) as usize] * kernel[(k + taps) as usize];
        }
        log_cache[i] = acc.max(1e-300).ln();
    }

    Ok(KdeDensity {
        bandwidth,
        n_samples: n,
        grid_min: lo,
        grid_step: step,
        log_cache,
        samples_sorted: sorted,
    })
}

impl KdeDensity {
    pub fn grid_range(&self) -> (f64, f64) {
        (
            self.grid_min,
            self.grid_min + self.grid_step * (self.log_cache.len() - 1) as f64,
        )
    }

    /// Log density. Inside the cache range: linear interpolation of the
    /// cached log values. Outside: exact kernel sum over the dominant
    /// sample window (tiny values, but strictly positive).
    pub fn log_eval(&self, x: f64) -> f64 {
        let pos = (x - self.grid_min) / self.grid_step;
        if pos >= 0.0 && pos <= (self.log_cache.len() - 1) as f64 {
            let idx = pos.floor() as usize;
            if idx + 1 >= self.log_cache.len() {
                return self.log_cache[idx];
            }
            let frac = pos - idx as f64;
            return self.log_cache[idx] * (1.0 - frac) + self.log_cache[idx + 1] * frac;
        }
        self.log_tail(x)
    }

    fn log_tail(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let nearest = match self
            .samples_sorted
            .binary_search_by(|s| s.partial_cmp(&x).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.min(self.samples_sorted.len() - 1),
        };
        let d0 = (x - self.samples_sorted[nearest]).abs();
        // Samples further than the nearest by 6h are negligible.
        let cut = d0 + 6.0 * h;
        let mut m = f64::NEG_INFINITY;
        let mut terms = Vec::new();
        let mut scan = |i: usize| {
            let d = (x - self.samples_sorted[i]).abs();
            if d <= cut {
                let u = d / h;
                let lt = -0.5 * u * u;
                terms.push(lt);
                if lt > m {
                    m = lt;
                }
                true
            } else {
                false
            }
        };
        for i in (0..=nearest).rev() {
            if !scan(i) {
                break;
            }
        }
        for i in nearest + 1..self.samples_sorted.len() {
            if !scan(i) {
                break;
            }
        }
        let sum: f64 = terms.iter().map(|&t| (t - m).exp()).sum();
        m + sum.ln()
            - (self.n_samples as f64 * h * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.log_eval(x).exp()
    }

    /// Argmax of the cached density.
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for i in 1..self.log_cache.len() {
            if self.log_cache[i] > self.log_cache[best] {
                best = i;
            }
        }
        self.grid_min + best as f64 * self.grid_step
    }
}

/// Draws the canonical noise sample and fits the KDE for a task's noise
/// configuration.
pub fn noise_kde_for(task: &ToyTask, seed: u64) -> Result<KdeDensity> {
    let mut rng = rng_from(seed, &[stream::REFERENCE, 0x6b64]);
    let samples = noise_sum_samples(task.config().noise, KDE_SAMPLES, &mut rng);
    fit_noise_kde(&samples)
}

/// Log likelihood `Σ_j ln p̂_noise(y_j − θ0 − θ1 g_m(d_j))`.
pub fn toy_loglik(y: &[f64], theta: &ToyTheta, m: ToyModel, d: &[f64], kde: &KdeDensity) -> f64 {
    debug_assert_eq!(y.len(), d.len());
    let mut acc = KahanSum::new();
    for (yj, dj) in y.iter().zip(d) {
        acc.add(kde.log_eval(yj - theta.offset - theta.slope * response(m, *dj)));
    }
    acc.value()
}

/// Likelihood density value (product over coordinates).
pub fn toy_likelihood(y: &[f64], theta: &ToyTheta, m: ToyModel, d: &[f64], kde: &KdeDensity) -> f64 {
    toy_loglik(y, theta, m, d, kde).exp()
}

/// Nested-MC sizes (outer × inner). Defaults follow the reference
/// computations: PE (2000, 500), MD (3000, 1000), MD/PE (2000, 500),
/// FP (800, –).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RefSizes {
    pub outer: usize,
    pub inner: usize,
}

impl RefSizes {
    pub fn defaults_for(goal: Goal) -> RefSizes {
        match goal {
            Goal::Pe => RefSizes { outer: 2_000, inner: 500 },
            Goal::Md => RefSizes { outer: 3_000, inner: 1_000 },
            Goal::MdPe => RefSizes { outer: 2_000, inner: 500 },
            Goal::Fp => RefSizes { outer: 800, inner: 0 },
        }
    }
}

/// Evaluation-grid axes of a normalised density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridAxes {
    /// 2-D continuous parameter grid (offset × slope, or β × γ).
    Theta2 { g0: Vec<f64>, g1: Vec<f64> },
    /// Discrete model indicator.
    Discrete { k: usize },
    /// Scalar grid (future observation).
    Scalar { g: Vec<f64> },
    /// Product of a 2-D parameter grid and a discrete indicator; values are
    /// laid out `[m][i0][i1]`.
    Theta2Model { g0: Vec<f64>, g1: Vec<f64>, k: usize },
}

impl GridAxes {
    pub fn len(&self) -> usize {
        match self {
            GridAxes::Theta2 { g0, g1 } => g0.len() * g1.len(),
            GridAxes::Discrete { k } => *k,
            GridAxes::Scalar { g } => g.len(),
            GridAxes::Theta2Model { g0, g1, k } => g0.len() * g1.len() * k,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of each node: Simpson along continuous axes,
    /// unit mass on discrete ones.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        match self {
            GridAxes::Theta2 { g0, g1 } => {
                let w0 = simpson_weights(g0.len(), g0[1] - g0[0]);
                let w1 = simpson_weights(g1.len(), g1[1] - g1[0]);
                let mut w = Vec::with_capacity(w0.len() * w1.len());
                for a in &w0 {
                    for b in &w1 {
                        w.push(a * b);
                    }
                }
                w
            }
            GridAxes::Discrete { k } => vec![1.0; *k],
            GridAxes::Scalar { g } => simpson_weights(g.len(), g[1] - g[0]),
            GridAxes::Theta2Model { g0, g1, k } => {
                let base = GridAxes::Theta2 { g0: g0.clone(), g1: g1.clone() }.quadrature_weights();
                let mut w = Vec::with_capacity(base.len() * k);
                for _ in 0..*k {
                    w.extend_from_slice(&base);
                }
                w
            }
        }
    }
}

/// A normalised density on a fixed evaluation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub axes: GridAxes,
    pub values: Vec<f64>,
}

impl PosteriorGrid {
    /// Normalises non-negative raw values under the grid quadrature.
    /// All-zero (underflowed) grids are a numerical error.
    pub fn normalised(axes: GridAxes, mut raw: Vec<f64>) -> Result<Self> {
        if raw.len() != axes.len() {
            return Err(Error::config("grid value count does not match axes"));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::numerical("grid densities must be finite and non-negative"));
        }
        let w = axes.quadrature_weights();
        let mut mass = KahanSum::new();
        for (v, wi) in raw.iter().zip(&w) {
            mass.add(v * wi);
        }
        let z = mass.value();
        if !(z.is_finite() && z > 0.0) {
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::numerical(format!(
                "grid mass underflowed (total {z:.3e}, max value {max:.3e}); \
                 the observation may lie outside the grid's support"
            )));
        }
        for v in raw.iter_mut() {
            *v /= z;
        }
        Ok(PosteriorGrid { axes, values: raw })
    }

    /// Normalises from log densities (stable under large offsets).
    pub fn from_log_values(axes: GridAxes, log_raw: &[f64]) -> Result<Self> {
        let m = log_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::numerical(
                "grid log-densities are all -inf; observation outside grid support",
            ));
        }
        let raw: Vec<f64> = log_raw.iter().map(|l| (l - m).exp()).collect();
        Self::normalised(axes, raw)
    }

    /// Total quadrature mass (1 after normalisation, up to rounding).
    pub fn mass(&self) -> f64 {
        let w = self.axes.quadrature_weights();
        let mut acc = KahanSum::new();
        for (v, wi) in self.values.iter().zip(&w) {
            acc.add(v * wi);
        }
        acc.value()
    }

    /// Grid coordinates of the density mode.
    pub fn mode_index(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Default toy parameter grid: 50×50 over [−10, 10]².
pub fn theta_grid_default() -> (Vec<f64>, Vec<f64>) {
    (linspace(-10.0, 10.0, 50), linspace(-10.0, 10.0, 50))
}

/// Default FP future-observation grid: 100 points over [−50, 50].
pub fn yt_grid_default() -> Vec<f64> {
    linspace(-50.0, 50.0, 100)
}

/// Default (β, γ) grid for SDE posteriors: 50×50 covering the prior bulk.
pub fn sde_rate_grid_default() -> (Vec<f64>, Vec<f64>) {
    (linspace(0.02, 1.50, 50), linspace(0.01, 0.75, 50))
}

/// Log density of the N(0, sd² I₂) toy prior.
pub fn toy_log_prior(theta: &ToyTheta, prior_sd: f64) -> f64 {
    let v = prior_sd * prior_sd;
    -(theta.offset * theta.offset + theta.slope * theta.slope) / (2.0 * v)
        - (2.0 * std::f64::consts::PI * v).ln()
}

/// Closed-form MI of the Gaussian-only linear model:
/// `½ ln det(I₂ + (prior_var/noise_var) XᵀX)` with X rows `(1, d_j)`.
pub fn linear_gaussian_mi(d: &[f64], prior_var: f64, noise_var: f64) -> f64 {
    let c = prior_var / noise_var;
    let n = d.len() as f64;
    let sum_d: f64 = d.iter().sum();
    let sum_d2: f64 = d.iter().map(|x| x * x).sum();
    let a = 1.0 + c * n;
    let b = c * sum_d;
    let e = 1.0 + c * sum_d2;
    0.5 * (a * e - b * b).ln()
}

fn simulate_obs(
    task: &ToyTask,
    m: ToyModel,
    theta: &ToyTheta,
    d: &[f64],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<f64> {
    let noise = sample_noise(task.config().noise, d.len(), rng);
    sample_path_toy(m, theta, d, &noise)
}

/// Nested-Monte-Carlo reference MI for a toy task at design `d`. Returns
/// the estimate and the outer-loop standard error.
pub fn reference_mi(
    task: &ToyTask,
    d: &[f64],
    sizes: &RefSizes,
    kde: &KdeDensity,
    seed: u64,
) -> Result<McEstimate> {
    let cfg = task.config();
    let prior_sd = cfg.prior_sd;
    match task.goal() {
        Goal::Pe => {
            // Contrastive nesting: the generating draw takes one inner slot,
            // which bounds every term by ln K and keeps the inner marginal
            // estimate from underflowing in ten data dimensions.
            let model = task.models()[0];
            let terms: Vec<f64> = (0..sizes.outer)
                .map(|i| {
                    let mut rng = rng_from(seed, &[stream::REFERENCE, 1, i as u64]);
                    let theta = sample_theta(prior_sd, &mut rng);
                    let y = simulate_obs(task, model, &theta, d, &mut rng);
                    let num = toy_loglik(&y, &theta, model, d, kde);
                    let mut inner: Vec<f64> = (0..sizes.inner)
                        .map(|_| {
                            let th = sample_theta(prior_sd, &mut rng);
                            toy_loglik(&y, &th, model, d, kde)
                        })
                        .collect();
                    inner[0] = num;
                    num - log_mean_exp(&inner)
                })
                .collect();
            finite_mc(&terms)
        }
        Goal::Md => {
            // Stratified over the true model; the numerator reuses the same
            // inner estimate as the marginal, so each term is <= ln 3.
            let models = task.models();
            let mut all_terms: Vec<Vec<f64>> = Vec::new();
            for (mi, &m_true) in models.iter().enumerate() {
                let terms: Vec<f64> = (0..sizes.outer)
                    .map(|i| {
                        let mut rng =
                            rng_from(seed, &[stream::REFERENCE, 2 + mi as u64, i as u64]);
                        let theta = sample_theta(prior_sd, &mut rng);
                        let y = simulate_obs(task, m_true, &theta, d, &mut rng);
                        let log_per_model: Vec<f64> = models
                            .iter()
                            .map(|&m| {
                                let inner: Vec<f64> = (0..sizes.inner)
                                    .map(|_| {
                                        let th = sample_theta(prior_sd, &mut rng);
                                        toy_loglik(&y, &th, m, d, kde)
                                    })
                                    .collect();
                                log_mean_exp(&inner)
                            })
                            .collect();
                        let p_m = 1.0 / models.len() as f64;
                        let marg = crate::util::log_sum_exp(
                            &log_per_model.iter().map(|l| l + p_m.ln()).collect::<Vec<_>>(),
                        );
                        log_per_model[mi] - marg
                    })
                    .collect();
                all_terms.push(terms);
            }
            stratified_mc(&all_terms)
        }
        Goal::MdPe => {
            let models = task.models();
            let mut all_terms: Vec<Vec<f64>> = Vec::new();
            for (mi, &m_true) in models.iter().enumerate() {
                let terms: Vec<f64> = (0..sizes.outer)
                    .map(|i| {
                        let mut rng =
                            rng_from(seed, &[stream::REFERENCE, 10 + mi as u64, i as u64]);
                        let theta = sample_theta(prior_sd, &mut rng);
                        let y = simulate_obs(task, m_true, &theta, d, &mut rng);
                        let num = toy_loglik(&y, &theta, m_true, d, kde);
                        let p_m = 1.0 / models.len() as f64;
                        let log_mix: Vec<f64> = models
                            .iter()
                            .enumerate()
                            .map(|(mj, &m)| {
                                let mut inner: Vec<f64> = (0..sizes.inner)
                                    .map(|_| {
                                        let th = sample_theta(prior_sd, &mut rng);
                                        toy_loglik(&y, &th, m, d, kde)
                                    })
                                    .collect();
                                if mj == mi {
                                    inner[0] = num;
                                }
                                log_mean_exp(&inner) + p_m.ln()
                            })
                            .collect();
                        num - crate::util::log_sum_exp(&log_mix)
                    })
                    .collect();
                all_terms.push(terms);
            }
            stratified_mc(&all_terms)
        }
        Goal::Fp => {
            let model = task.models()[0];
            let d_t = cfg
                .d_future
                .ok_or_else(|| Error::config("FP reference requires d_future"))?;
            let (g0, g1) = theta_grid_default();
            let yt = yt_grid_default();
            let pred = predictive_matrix(model, &g0, &g1, d_t, &yt, kde);
            let log_prior = theta_log_prior_grid(&g0, &g1, prior_sd);
            let theta_w = GridAxes::Theta2 { g0: g0.clone(), g1: g1.clone() }.quadrature_weights();
            let yt_w = simpson_weights(yt.len(), yt[1] - yt[0]);

            // Prior predictive over y_T.
            let prior_pred = weighted_predictive(&pred, &log_prior, &theta_w)?;

            let terms: Vec<f64> = (0..sizes.outer)
                .map(|i| {
                    let mut rng = rng_from(seed, &[stream::REFERENCE, 20, i as u64]);
                    let theta = sample_theta(prior_sd, &mut rng);
                    let y = simulate_obs(task, model, &theta, d, &mut rng);
                    let log_post: Vec<f64> = (0..g0.len() * g1.len())
                        .map(|g| {
                            let th = ToyTheta {
                                offset: g0[g / g1.len()],
                                slope: g1[g % g1.len()],
                            };
                            log_prior[g] + toy_loglik(&y, &th, model, d, kde)
                        })
                        .collect();
                    let post_pred = match weighted_predictive(&pred, &log_post, &theta_w) {
                        Ok(p) => p,
                        Err(_) => return f64::NAN,
                    };
                    // KL(posterior predictive || prior predictive) over y_T.
                    let mut acc = KahanSum::new();
                    for t in 0..yt.len() {
                        if post_pred[t] > 0.0 {
                            acc.add(
                                yt_w[t] * post_pred[t] * (post_pred[t] / prior_pred[t]).ln(),
                            );
                        }
                    }
                    acc.value()
                })
                .collect();
            finite_mc(&terms)
        }
    }
}

fn finite_mc(terms: &[f64]) -> Result<McEstimate> {
    if terms.iter().any(|t| !t.is_finite()) {
        let bad = terms.iter().filter(|t| !t.is_finite()).count();
        return Err(Error::numerical(format!(
            "{bad}/{} reference MI terms are non-finite (inner marginal underflow)",
            terms.len()
        )));
    }
    let (value, se) = mean_se(terms);
    Ok(McEstimate { value, se })
}

fn stratified_mc(per_stratum: &[Vec<f64>]) -> Result<McEstimate> {
    let k = per_stratum.len() as f64;
    let mut value = 0.0;
    let mut var = 0.0;
    for terms in per_stratum {
        if terms.iter().any(|t| !t.is_finite()) {
            return Err(Error::numerical("non-finite reference MI stratum"));
        }
        let (m, se) = mean_se(terms);
        value += m / k;
        var += (se / k) * (se / k);
    }
    Ok(McEstimate { value, se: var.sqrt() })
}

/// `p̂(y_T | θ)` on the predictive grid for every θ-grid node (row-major
/// over the θ grid).
fn predictive_matrix(
    model: ToyModel,
    g0: &[f64],
    g1: &[f64],
    d_t: f64,
    yt: &[f64],
    kde: &KdeDensity,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(g0.len() * g1.len());
    for &off in g0 {
        for &slope in g1 {
            let mean = off + slope * response(model, d_t);
            out.push(yt.iter().map(|&y| kde.eval(y - mean)).collect());
        }
    }
    out
}

fn theta_log_prior_grid(g0: &[f64], g1: &[f64], prior_sd: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(g0.len() * g1.len());
    for &off in g0 {
        for &slope in g1 {
            out.push(toy_log_prior(&ToyTheta { offset: off, slope }, prior_sd));
        }
    }
    out
}

/// Mixes the predictive matrix under normalised grid weights derived from
/// log densities: returns a proper density over the y_T grid.
fn weighted_predictive(
    pred: &[Vec<f64>],
    log_weights: &[f64],
    quad_w: &[f64],
) -> Result<Vec<f64>> {
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::numerical("predictive weights underflowed"));
    }
    let mut w: Vec<f64> = log_weights
        .iter()
        .zip(quad_w)
        .map(|(l, q)| (l - m).exp() * q)
        .collect();
    let z: f64 = w.iter().sum();
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::numerical("predictive weights sum underflowed"));
    }
    for wi in w.iter_mut() {
        *wi /= z;
    }
    let n_t = pred[0].len();
    let mut out = vec![0.0; n_t];
    for (row, wi) in pred.iter().zip(&w) {
        if *wi > 0.0 {
            for t in 0..n_t {
                out[t] += wi * row[t];
            }
        }
    }
    Ok(out)
}

/// Quadrature reference posterior for a toy task given one observation.
///
/// * PE: Bayes over the default 50×50 θ grid (Simpson-normalised);
/// * MD: discrete posterior over the three models (inner-MC marginals);
/// * MD/PE: joint (θ, m) grid;
/// * FP: posterior predictive density over the y_T grid.
pub fn reference_posterior(
    task: &ToyTask,
    d: &[f64],
    y_obs: &[f64],
    kde: &KdeDensity,
    seed: u64,
) -> Result<PosteriorGrid> {
    let cfg = task.config();
    let prior_sd = cfg.prior_sd;
    match task.goal() {
        Goal::Pe => {
            let model = task.models()[0];
            let (g0, g1) = theta_grid_default();
            let mut log_vals = Vec::with_capacity(g0.len() * g1.len());
            for &off in &g0 {
                for &slope in &g1 {
                    let th = ToyTheta { offset: off, slope };
                    log_vals
                        .push(toy_log_prior(&th, prior_sd) + toy_loglik(y_obs, &th, model, d, kde));
                }
            }
            PosteriorGrid::from_log_values(GridAxes::Theta2 { g0, g1 }, &log_vals)
        }
        Goal::Md => {
            let models = task.models();
            let inner = RefSizes::defaults_for(Goal::Md).inner;
            let log_vals: Vec<f64> = models
                .iter()
                .enumerate()
                .map(|(mi, &m)| {
                    let mut rng = rng_from(seed, &[stream::REFERENCE, 30, mi as u64]);
                    let inner_ll: Vec<f64> = (0..inner)
                        .map(|_| {
                            let th = sample_theta(prior_sd, &mut rng);
                            toy_loglik(y_obs, &th, m, d, kde)
                        })
                        .collect();
                    log_mean_exp(&inner_ll) + (1.0 / models.len() as f64).ln()
                })
                .collect();
            PosteriorGrid::from_log_values(GridAxes::Discrete { k: models.len() }, &log_vals)
        }
        Goal::MdPe => {
            let models = task.models();
            let (g0, g1) = theta_grid_default();
            let mut log_vals = Vec::with_capacity(models.len() * g0.len() * g1.len());
            let p_m = (1.0 / models.len() as f64).ln();
            for &m in models {
                for &off in &g0 {
                    for &slope in &g1 {
                        let th = ToyTheta { offset: off, slope };
                        log_vals.push(
                            p_m + toy_log_prior(&th, prior_sd)
                                + toy_loglik(y_obs, &th, m, d, kde),
                        );
                    }
                }
            }
            PosteriorGrid::from_log_values(
                GridAxes::Theta2Model { g0, g1, k: models.len() },
                &log_vals,
            )
        }
        Goal::Fp => {
            let model = task.models()[0];
            let d_t = cfg
                .d_future
                .ok_or_else(|| Error::config("FP reference requires d_future"))?;
            let (g0, g1) = theta_grid_default();
            let yt = yt_grid_default();
            let pred = predictive_matrix(model, &g0, &g1, d_t, &yt, kde);
            let theta_w = GridAxes::Theta2 { g0: g0.clone(), g1: g1.clone() }.quadrature_weights();
            let mut log_post = Vec::with_capacity(g0.len() * g1.len());
            for &off in &g0 {
                for &slope in &g1 {
                    let th = ToyTheta { offset: off, slope };
                    log_post.push(
                        toy_log_prior(&th, prior_sd) + toy_loglik(y_obs, &th, model, d, kde),
                    );
                }
            }
            let post_pred = weighted_predictive(&pred, &log_post, &theta_w)?;
            PosteriorGrid::normalised(GridAxes::Scalar { g: yt }, post_pred)
        }
    }
}

/// Average signal-to-noise ratio of a toy model over prior draws:
/// `SNR(d|θ) = (θ0 + θ1 g(d))² / Var(noise)`, averaged over θ. The
/// deterministic response is the signal; additive noise has fixed variance,
/// so zero-signal parameter draws contribute zero.
pub fn snr_profile_toy(
    m: ToyModel,
    cfg: &crate::toy::ToyConfig,
    d_grid: &[f64],
    n_draws: usize,
    seed: u64,
) -> Vec<f64> {
    let noise_var = cfg.noise.variance();
    let mut rng = rng_from(seed, &[stream::DIAGNOSTIC, 1]);
    let thetas: Vec<ToyTheta> = (0..n_draws).map(|_| sample_theta(cfg.prior_sd, &mut rng)).collect();
    d_grid
        .iter()
        .map(|&d| {
            let mut acc = KahanSum::new();
            for th in &thetas {
                let mu = th.offset + th.slope * response(m, d);
                acc.add(mu * mu / noise_var);
            }
            acc.value() / n_draws as f64
        })
        .collect()
}

/// Average SNR of the Poisson-observed epidemic response. For each prior
/// draw a small path ensemble is simulated; `SNR(t|θ) = E[y]² / Var(y)`
/// with `Var(y) = φ E[I] + φ² Var(I)`. Draws with zero variance at a grid
/// point are excluded there (counted in `excluded`).
pub struct SdeSnrProfile {
    pub snr: Vec<f64>,
    pub excluded: usize,
}

pub fn snr_profile_sde(
    model: crate::sde::EpiModel,
    priors: &crate::sde::EpiPriors,
    t_grid: &[f64],
    n_theta: usize,
    paths_per_theta: usize,
    phi: f64,
    seed: u64,
) -> SdeSnrProfile {
    use crate::sde::{sample_prior_params, simulate_paths, SdeConfig};
    let horizon = t_grid.iter().cloned().fold(0.0f64, f64::max);
    let cfg = SdeConfig { n_pop: 500.0, dt: 5e-2, horizon, n_paths: paths_per_theta };
    let mut snr_acc = vec![KahanSum::new(); t_grid.len()];
    let mut counts = vec![0usize; t_grid.len()];
    let mut excluded = 0usize;
    for k in 0..n_theta {
        let p = sample_prior_params(model, priors, 1, seed.wrapping_add(k as u64 + 1))[0];
        let grid = simulate_paths(model, &vec![p; paths_per_theta], &cfg, seed ^ (k as u64) << 17);
        for (ti, &t) in t_grid.iter().enumerate() {
            let vals: Vec<f64> =
                (0..paths_per_theta).map(|pa| grid.lookup_i(pa, t).0).collect();
            let (mean_i, _) = mean_se(&vals);
            let var_i = vals.iter().map(|&v| (v - mean_i) * (v - mean_i)).sum::<f64>()
                / (vals.len() - 1) as f64;
            let mean_y = phi * mean_i;
            let var_y = phi * mean_i + phi * phi * var_i;
            if var_y > 0.0 {
                snr_acc[ti].add(mean_y * mean_y / var_y);
                counts[ti] += 1;
            } else {
                excluded += 1;
            }
        }
    }
    let snr = snr_acc
        .iter()
        .zip(&counts)
        .map(|(a, &c)| if c > 0 { a.value() / c as f64 } else { 0.0 })
        .collect();
    SdeSnrProfile { snr, excluded }
}

/// Jensen-Shannon divergence of two discrete distributions (natural log,
/// so values lie in [0, ln 2]).
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc.add(0.5 * a * (a / m).ln());
        }
        if b > 0.0 {
            acc.add(0.5 * b * (b / m).ln());
        }
    }
    acc.value().max(0.0)
}

fn histogram_pair(xs: &[f64], ys: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = xs
        .iter()
        .chain(ys)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = xs
        .iter()
        .chain(ys)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut p = vec![0.0; bins];
    let mut q = vec![0.0; bins];
    for &x in xs {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        p[b] += 1.0 / xs.len() as f64;
    }
    for &y in ys {
        let b = (((y - lo) / width) as usize).min(bins - 1);
        q[b] += 1.0 / ys.len() as f64;
    }
    (p, q)
}

/// Per-design-point JS divergence between the 1-D data distributions of two
/// toy models (histogram density estimates over prior-predictive samples).
pub fn js_divergence_profile_toy(
    model_a: ToyModel,
    model_b: ToyModel,
    cfg: &crate::toy::ToyConfig,
    d_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = rng_from(seed, &[stream::DIAGNOSTIC, 2]);
    d_grid
        .iter()
        .map(|&d| {
            let sample = |m: ToyModel, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..n_samples)
                    .map(|_| {
                        let th = sample_theta(cfg.prior_sd, rng);
                        let noise = sample_noise(cfg.noise, 1, rng);
                        sample_path_toy(m, &th, &[d], &noise)[0]
                    })
                    .collect()
            };
            let xs = sample(model_a, &mut rng);
            let ys = sample(model_b, &mut rng);
            let (p, q) = histogram_pair(&xs, &ys, 60);
            js_divergence(&p, &q)
        })
        .collect()
}

/// Per-measurement-time JS divergence between the observed-count
/// distributions of two pre-simulated banks.
pub fn js_divergence_profile_sde(
    bank_a: &crate::sde::SdeGrid,
    bank_b: &crate::sde::SdeGrid,
    t_grid: &[f64],
    phi: f64,
    n_samples: usize,
    seed: u64,
) -> Vec<f64> {
    use crate::sde::observe;
    let mut rng = rng_from(seed, &[stream::DIAGNOSTIC, 3]);
    t_grid
        .iter()
        .map(|&t| {
            let draw = |bank: &crate::sde::SdeGrid, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..n_samples)
                    .map(|_| {
                        let path = rng.random_range(0..bank.n_paths());
                        observe(bank.lookup_i(path, t).0, phi, rng) as f64
                    })
                    .collect()
            };
            let xs = draw(bank_a, &mut rng);
            let ys = draw(bank_b, &mut rng);
            let (p, q) = histogram_pair(&xs, &ys, 60);
            js_divergence(&p, &q)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{build_task, GammaConvention, NoiseKind, ToyConfig};
    use crate::util::linspace;

    fn standard_kde(seed: u64) -> KdeDensity {
        let mut rng = rng_from(seed, &[1]);
        let samples = noise_sum_samples(NoiseKind::default(), KDE_SAMPLES, &mut rng);
        fit_noise_kde(&samples).unwrap()
    }

    #[test]
    fn kde_requires_enough_samples() {
        assert!(fit_noise_kde(&vec![0.0; 999]).is_err());
    }

    #[test]
    fn kde_on_pure_gaussian_recovers_moments() {
        let mut rng = rng_from(3, &[2]);
        let samples = noise_sum_samples(NoiseKind::GaussOnly, KDE_SAMPLES, &mut rng);
        let kde = fit_noise_kde(&samples).unwrap();
        // Quadrature moments of the KDE density.
        let xs = linspace(-8.0, 8.0, 3201);
        let h = xs[1] - xs[0];
        let dens: Vec<f64> = xs.iter().map(|&x| kde.eval(x)).collect();
        let mass = crate::util::simpson(&dens, h);
        let mean = crate::util::simpson(
            &xs.iter().zip(&dens).map(|(x, d)| x * d).collect::<Vec<_>>(),
            h,
        ) / mass;
        let var = crate::util::simpson(
            &xs.iter().zip(&dens).map(|(x, d)| (x - mean) * (x - mean) * d).collect::<Vec<_>>(),
            h,
        ) / mass;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "sd {}", var.sqrt());
    }

    #[test]
    fn kde_far_tail_is_tiny_but_positive() {
        let kde = standard_kde(5);
        let v = kde.eval(-50.0);
        assert!(v < 1e-8);
        assert!(v >= 0.0);
        assert!(kde.log_eval(-50.0).is_finite());
    }

    #[test]
    fn kde_normalises_on_wide_grid() {
        let kde = standard_kde(7);
        let xs = linspace(-30.0, 30.0, 6001);
        let dens: Vec<f64> = xs.iter().map(|&x| kde.eval(x)).collect();
        let mass = crate::util::simpson(&dens, xs[1] - xs[0]);
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    #[test]
    fn likelihood_at_noise_mode_hits_kde_mode() {
        let kde = standard_kde(9);
        let mode = kde.mode();
        let th = ToyTheta { offset: 1.5, slope: -0.7 };
        let d = [0.8];
        let y = [th.offset + th.slope * response(ToyModel::Linear, d[0]) + mode];
        let lik = toy_likelihood(&y, &th, ToyModel::Linear, &d, &kde);
        let mode_val = kde.eval(mode);
        assert!((lik - mode_val).abs() < 1e-12 * mode_val);
    }

    #[test]
    fn likelihood_invariant_under_joint_permutation() {
        let kde = standard_kde(11);
        let th = ToyTheta { offset: 0.4, slope: 2.0 };
        let d = [0.5, -1.0, 1.5, 2.0];
        let y = [1.0, -0.3, 3.1, 4.0];
        let base = toy_loglik(&y, &th, ToyModel::Sqrt, &d, &kde);
        let perm = [2usize, 0, 3, 1];
        let dp: Vec<f64> = perm.iter().map(|&i| d[i]).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let permuted = toy_loglik(&yp, &th, ToyModel::Sqrt, &dp, &kde);
        assert!((base - permuted).abs() < 1e-10);
    }

    #[test]
    fn loglik_matches_numerical_convolution() {
        // p_noise = N(0,1) * Gamma(2,2), computed by quadrature.
        let kde = standard_kde(13);
        let noise = NoiseKind::default();
        let conv = |z: f64| -> f64 {
            let us = linspace(1e-6, 60.0, 24001);
            let h = us[1] - us[0];
            let vals: Vec<f64> = us
                .iter()
                .map(|&u| {
                    let ga = z - u;
                    let normal =
                        (-0.5 * ga * ga).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    noise.gamma_density(u) * normal
                })
                .collect();
            crate::util::simpson(&vals, h)
        };
        let mut rng = rng_from(15, &[1]);
        for _ in 0..20 {
            let z = rng.random_range(-2.0..12.0);
            let kde_log = kde.log_eval(z);
            let conv_log = conv(z).ln();
            assert!(
                (kde_log - conv_log).abs() < 0.05,
                "z={z}: kde {kde_log} vs conv {conv_log}"
            );
        }
    }

    fn pe_optimal_design() -> Vec<f64> {
        let mut d = vec![-2.0; 5];
        d.extend(vec![2.0; 5]);
        d
    }

    #[test]
    fn pe_reference_matches_paper_value() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let kde = standard_kde(17);
        let est = reference_mi(
            &task,
            &pe_optimal_design(),
            &RefSizes { outer: 2_000, inner: 500 },
            &kde,
            21,
        )
        .unwrap();
        assert!(
            (est.value - 3.55).abs() < 0.15,
            "PE reference {} ± {}",
            est.value,
            est.se
        );
    }

    #[test]
    fn md_reference_matches_paper_value_and_entropy_bound() {
        let task = build_task(Goal::Md, None, ToyConfig::default()).unwrap();
        let kde = standard_kde(19);
        let mut d = vec![-2.0; 3];
        d.extend(vec![0.0; 4]);
        d.extend(vec![2.0; 4]);
        let est = reference_mi(&task, &d[..10], &RefSizes { outer: 1_500, inner: 800 }, &kde, 23)
            .unwrap();
        assert!(est.value <= 3.0f64.ln());
        assert!(
            (est.value - 0.737).abs() < 0.03,
            "MD reference {} ± {}",
            est.value,
            est.se
        );
    }

    #[test]
    fn fp_reference_near_paper_value() {
        let task = build_task(Goal::Fp, None, ToyConfig::default()).unwrap();
        let kde = standard_kde(25);
        let est = reference_mi(
            &task,
            &pe_optimal_design(),
            &RefSizes { outer: 300, inner: 0 },
            &kde,
            27,
        )
        .unwrap();
        assert!(
            (est.value - 1.34).abs() < 0.15,
            "FP reference {} ± {}",
            est.value,
            est.se
        );
    }

    #[test]
    fn gauss_only_reference_matches_analytic_mi() {
        let cfg = ToyConfig { noise: NoiseKind::GaussOnly, ..ToyConfig::default() };
        let task = build_task(Goal::Pe, None, cfg).unwrap();
        let mut rng = rng_from(29, &[3]);
        let samples = noise_sum_samples(NoiseKind::GaussOnly, KDE_SAMPLES, &mut rng);
        let kde = fit_noise_kde(&samples).unwrap();
        for trial in 0..3 {
            let d: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
            let est = reference_mi(
                &task,
                &d,
                &RefSizes { outer: 500, inner: 8_000 },
                &kde,
                31 + trial,
            )
            .unwrap();
            let exact = linear_gaussian_mi(&d, 9.0, 1.0);
            assert!(
                (est.value - exact).abs() < 3.0 * est.se.max(0.02),
                "trial {trial}: {} ± {} vs exact {exact}",
                est.value,
                est.se
            );
        }
    }

    #[test]
    fn reference_mi_invariant_to_design_permutation() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let kde = standard_kde(33);
        let d: Vec<f64> = vec![-2.0, -1.0, 0.3, 0.9, 1.7, 2.0, -0.4, 1.2, -1.6, 0.0];
        let sizes = RefSizes { outer: 600, inner: 400 };
        let a = reference_mi(&task, &d, &sizes, &kde, 35).unwrap();
        let mut dp = d.clone();
        dp.reverse();
        let b = reference_mi(&task, &dp, &sizes, &kde, 35).unwrap();
        let tol = 2.0 * (a.se + b.se);
        assert!((a.value - b.value).abs() < tol, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn posterior_grids_are_proper_and_average_mode_recovers_truth() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let kde = standard_kde(37);
        let d = pe_optimal_design();
        let th = ToyTheta { offset: 2.0, slope: 3.0 };
        let (g0, g1) = theta_grid_default();
        let mut avg = vec![0.0; g0.len() * g1.len()];
        let n_obs = 100;
        for o in 0..n_obs {
            let mut rng = rng_from(39, &[o]);
            let noise = sample_noise(NoiseKind::default(), 10, &mut rng);
            let y = sample_path_toy(ToyModel::Linear, &th, &d, &noise);
            let post = reference_posterior(&task, &d, &y, &kde, 41).unwrap();
            assert!((post.mass() - 1.0).abs() < 1e-6);
            for (a, v) in avg.iter_mut().zip(&post.values) {
                *a += v / n_obs as f64;
            }
        }
        // The observation-averaged posterior peaks at the ground truth.
        let avg_grid =
            PosteriorGrid::normalised(GridAxes::Theta2 { g0: g0.clone(), g1: g1.clone() }, avg)
                .unwrap();
        let idx = avg_grid.mode_index();
        let mode = (g0[idx / g1.len()], g1[idx % g1.len()]);
        assert!((mode.0 - 2.0).abs() < 1.0 && (mode.1 - 3.0).abs() < 1.0, "mode {mode:?}");
    }

    #[test]
    fn flat_likelihood_posterior_equals_prior() {
        // A synthetic grid built from the prior alone must normalise back
        // to the prior.
        let (g0, g1) = theta_grid_default();
        let mut log_vals = Vec::new();
        for &a in &g0 {
            for &b in &g1 {
                log_vals.push(toy_log_prior(&ToyTheta { offset: a, slope: b }, 3.0));
            }
        }
        let grid =
            PosteriorGrid::from_log_values(GridAxes::Theta2 { g0: g0.clone(), g1: g1.clone() }, &log_vals)
                .unwrap();
        // Compare a few ratios against the prior density ratio.
        let prior = |a: f64, b: f64| toy_log_prior(&ToyTheta { offset: a, slope: b }, 3.0).exp();
        let v = |i: usize, j: usize| grid.values[i * g1.len() + j];
        let r_grid = v(25, 25) / v(20, 30);
        let r_prior = prior(g0[25], g1[25]) / prior(g0[20], g1[30]);
        assert!((r_grid / r_prior - 1.0).abs() < 1e-9);
    }

    #[test]
    fn md_posterior_sums_to_one_exactly() {
        let task = build_task(Goal::Md, None, ToyConfig::default()).unwrap();
        let kde = standard_kde(43);
        let d = vec![1.0; 10];
        let mut rng = rng_from(45, &[1]);
        let th = ToyTheta { offset: 2.0, slope: 3.0 };
        let noise = sample_noise(NoiseKind::default(), 10, &mut rng);
        let y = sample_path_toy(ToyModel::Log, &th, &d, &noise);
        let post = reference_posterior(&task, &d, &y, &kde, 47).unwrap();
        let total: f64 = post.values.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn underflowed_grid_is_numerical_error() {
        let axes = GridAxes::Discrete { k: 3 };
        assert!(matches!(
            PosteriorGrid::normalised(axes, vec![0.0, 0.0, 0.0]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn snr_toy_examples() {
        let cfg = ToyConfig::default();
        let d_grid = linspace(-2.0, 2.0, 41);
        // Zero-signal model: SNR identically zero.
        let zero_cfg = ToyConfig { prior_sd: 0.0, ..cfg };
        let snr0 = snr_profile_toy(ToyModel::Linear, &zero_cfg, &d_grid, 50, 49);
        assert!(snr0.iter().all(|&s| s == 0.0));
        // Linear model: maximal at the boundary |d| = 2.
        let snr = snr_profile_toy(ToyModel::Linear, &cfg, &d_grid, 2_000, 51);
        let max_idx = snr
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(max_idx == 0 || max_idx == d_grid.len() - 1, "SNR max at {}", d_grid[max_idx]);
    }

    #[test]
    fn snr_sir_peaks_in_mid_epidemic() {
        let t_grid = linspace(0.0, 60.0, 25);
        let prof = snr_profile_sde(
            crate::sde::EpiModel::Sir,
            &crate::sde::EpiPriors::default(),
            &t_grid,
            12,
            80,
            0.95,
            53,
        );
        let max_idx = prof
            .snr
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let t_peak = t_grid[max_idx];
        assert!((10.0..=40.0).contains(&t_peak), "SNR peak at t = {t_peak}");
    }

    #[test]
    fn js_profile_examples() {
        let cfg = ToyConfig::default();
        let d_grid = vec![-2.0, -1.0, -0.05, 0.05, 1.0, 2.0];
        // Identical models: divergence is sampling noise only.
        let same = js_divergence_profile_toy(ToyModel::Linear, ToyModel::Linear, &cfg, &d_grid, 4_000, 55);
        for v in &same {
            assert!(*v < 0.03, "self-JS {v}");
            assert!(*v >= 0.0);
        }
        // Linear vs log: all values within [0, ln 2], local max near d = 0.
        let cross = js_divergence_profile_toy(ToyModel::Linear, ToyModel::Log, &cfg, &d_grid, 4_000, 57);
        for v in &cross {
            assert!(*v <= 2.0f64.ln() + 1e-12);
        }
        let near_zero = cross[2].max(cross[3]);
        assert!(near_zero > cross[1] && near_zero > cross[4],
            "expected local max near d=0: {cross:?}");
    }

    #[test]
    fn gamma_convention_flips_noise_mean() {
        let kind = NoiseKind::GaussGamma { gamma: GammaConvention::ShapeRate };
        assert_eq!(kind.mean(), 1.0);
        let mut rng = rng_from(59, &[1]);
        let samples = noise_sum_samples(kind, 20_000, &mut rng);
        let (mean, se) = mean_se(&samples);
        assert!((mean - 1.0).abs() < 4.0 * se);
    }
}
