//! SDE-based SIR and SEIR epidemic simulators.
//!
//! The continuous-time Markov chain dynamics are approximated by an Itô
//! diffusion `dX = f(X) dt + G(X) dW` whose drift matches the expected state
//! change and whose `G Gᵀ` matches the infinitesimal covariance of the jump
//! process. Paths are integrated with Euler–Maruyama on a fine pre-simulated
//! grid; training then looks states up at the nearest grid point.
//!
//! Observations are noisy counts of the infectious compartment,
//! `y | t ~ Poisson(φ I(t))`, which gives the tractable observation density
//! the score-function design-gradient estimator needs: measurement times are
//! the designs, and `∇_t log p(y|t) = (y/λ - 1) φ dI/dt`.

use crate::error::{Error, Result};
use crate::task::{Goal, GradRoute, TaskSampler};
use crate::util::{rng_from, stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Known detection rate of the Poisson observation process.
pub const DEFAULT_PHI: f64 = 0.95;

/// Poisson rates are floored here so zero infectious counts stay valid.
pub const MIN_POISSON_RATE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpiModel {
    #[serde(rename = "sde-sir")]
    Sir,
    #[serde(rename = "sde-seir")]
    Seir,
}

impl EpiModel {
    pub fn id(&self) -> &'static str {
        match self {
            EpiModel::Sir => "sde-sir",
            EpiModel::Seir => "sde-seir",
        }
    }

    /// Stored compartments: `[S, I]` for SIR, `[S, E, I]` for SEIR.
    pub fn state_dim(&self) -> usize {
        match self {
            EpiModel::Sir => 2,
            EpiModel::Seir => 3,
        }
    }

    /// Index of the infectious compartment.
    pub fn i_index(&self) -> usize {
        self.state_dim() - 1
    }
}

impl std::str::FromStr for EpiModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sde-sir" | "sir" => Ok(EpiModel::Sir),
            "sde-seir" | "seir" => Ok(EpiModel::Seir),
            other => Err(Error::config(format!("unknown SDE model id '{other}'"))),
        }
    }
}

/// Rates of one epidemic model draw. `sigma` (incubation-exit rate) is only
/// present for SEIR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpiParams {
    pub beta: f64,
    pub gamma: f64,
    pub sigma: Option<f64>,
}

/// Log-normal priors over the rates: `log X ~ N(ln median, log_sd²)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpiPriors {
    pub median_beta: f64,
    pub median_gamma: f64,
    pub median_sigma: f64,
    pub log_sd: f64,
}

impl Default for EpiPriors {
    fn default() -> Self {
        EpiPriors { median_beta: 0.50, median_gamma: 0.10, median_sigma: 0.20, log_sd: 0.50 }
    }
}

impl EpiPriors {
    pub fn sample(&self, model: EpiModel, rng: &mut ChaCha8Rng) -> EpiParams {
        let draw = |median: f64, rng: &mut ChaCha8Rng| {
            LogNormal::new(median.ln(), self.log_sd).unwrap().sample(rng)
        };
        let beta = draw(self.median_beta, rng);
        let gamma = draw(self.median_gamma, rng);
        let sigma = match model {
            EpiModel::Sir => None,
            EpiModel::Seir => Some(draw(self.median_sigma, rng)),
        };
        EpiParams { beta, gamma, sigma }
    }

    /// Log prior density of `(β, γ)`, marginal over σ.
    pub fn log_density_beta_gamma(&self, beta: f64, gamma: f64) -> f64 {
        lognormal_logpdf(beta, self.median_beta.ln(), self.log_sd)
            + lognormal_logpdf(gamma, self.median_gamma.ln(), self.log_sd)
    }
}

fn lognormal_logpdf(x: f64, mu: f64, sd: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = (x.ln() - mu) / sd;
    -0.5 * z * z - x.ln() - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Event rates of the jump process at state `x`.
fn event_rates(model: EpiModel, p: &EpiParams, x: &[f64], n_pop: f64) -> Vec<f64> {
    match model {
        EpiModel::Sir => {
            let (s, i) = (x[0], x[1]);
            vec![p.beta * s * i / n_pop, p.gamma * i]
        }
        EpiModel::Seir => {
            let (s, e, i) = (x[0], x[1], x[2]);
            vec![
                p.beta * s * i / n_pop,
                p.sigma.expect("SEIR params carry sigma") * e,
                p.gamma * i,
            ]
        }
    }
}

/// Drift vector: the expected state change per unit time.
pub fn drift(model: EpiModel, p: &EpiParams, x: &[f64], n_pop: f64) -> Vec<f64> {
    let r = event_rates(model, p, x, n_pop);
    match model {
        EpiModel::Sir => vec![-r[0], r[0] - r[1]],
        EpiModel::Seir => vec![-r[0], r[0] - r[1], r[1] - r[2]],
    }
}

/// Lower-triangular diffusion matrix `G` with `G Gᵀ` equal to the
/// infinitesimal covariance of the jump process. Rate arguments are clamped
/// at zero before the square root.
pub fn diffusion(model: EpiModel, p: &EpiParams, x: &[f64], n_pop: f64) -> Vec<Vec<f64>> {
    let r: Vec<f64> = event_rates(model, p, x, n_pop)
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .collect();
    match model {
        EpiModel::Sir => vec![vec![-r[0], 0.0], vec![r[0], -r[1]]],
        EpiModel::Seir => vec![
            vec![-r[0], 0.0, 0.0],
            vec![r[0], -r[1], 0.0],
            vec![0.0, r[1], -r[2]],
        ],
    }
}

/// Infinitesimal covariance of the jump process (for validating `G Gᵀ`).
pub fn jump_covariance(model: EpiModel, p: &EpiParams, x: &[f64], n_pop: f64) -> Vec<Vec<f64>> {
    let r = event_rates(model, p, x, n_pop);
    match model {
        EpiModel::Sir => vec![vec![r[0], -r[0]], vec![-r[0], r[0] + r[1]]],
        EpiModel::Seir => vec![
            vec![r[0], -r[0], 0.0],
            vec![-r[0], r[0] + r[1], -r[1]],
            vec![0.0, -r[1], r[1] + r[2]],
        ],
    }
}

/// Static simulation configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SdeConfig {
    pub n_pop: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
}

impl SdeConfig {
    /// Desk-scale defaults: coarser grid and fewer paths than the headline
    /// pre-simulation.
    pub fn desk() -> Self {
        SdeConfig { n_pop: 500.0, dt: 2e-2, horizon: 100.0, n_paths: 5_000 }
    }

    pub fn paper() -> Self {
        SdeConfig { n_pop: 500.0, dt: 1e-2, horizon: 100.0, n_paths: 20_000 }
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }
}

/// Initial state per model: `(498, 2)` susceptible/infectious for SIR and
/// `(498, 0, 2)` for SEIR.
pub fn initial_state(model: EpiModel) -> Vec<f64> {
    match model {
        EpiModel::Sir => vec![498.0, 2.0],
        EpiModel::Seir => vec![498.0, 0.0, 2.0],
    }
}

/// A bank of pre-simulated trajectories on a shared time grid, one prior
/// parameter draw per path. States are stored as `f32`.
pub struct SdeGrid {
    pub model: EpiModel,
    pub cfg: SdeConfig,
    pub seed: u64,
    pub params: Vec<EpiParams>,
    /// `[path][step * state_dim + comp]`, flattened.
    states: Vec<f32>,
    n_steps: usize,
}

/// Draws one prior parameter vector per path, keyed by path id so path `i`
/// is identical no matter how many paths are simulated.
pub fn sample_prior_params(
    model: EpiModel,
    priors: &EpiPriors,
    n: usize,
    seed: u64,
) -> Vec<EpiParams> {
    (0..n)
        .map(|i| {
            let mut rng = rng_from(seed, &[stream::SDE_PARAMS, i as u64]);
            priors.sample(model, &mut rng)
        })
        .collect()
}

/// Euler–Maruyama integration of one path.
fn simulate_one_path(
    model: EpiModel,
    p: &EpiParams,
    cfg: &SdeConfig,
    rng: &mut ChaCha8Rng,
    out: &mut [f32],
) {
    let dim = model.state_dim();
    let sqrt_dt = cfg.dt.sqrt();
    let mut x = initial_state(model);
    for (c, &v) in x.iter().enumerate() {
        out[c] = v as f32;
    }
    let n_steps = cfg.n_steps();
    for step in 1..n_steps {
        let f = drift(model, p, &x, cfg.n_pop);
        let g = diffusion(model, p, &x, cfg.n_pop);
        let xi: Vec<f64> = (0..dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        for c in 0..dim {
            let mut noise = 0.0;
            for (j, &x_j) in xi.iter().enumerate() {
                noise += g[c][j] * x_j;
            }
            x[c] += f[c] * cfg.dt + noise * sqrt_dt;
            x[c] = x[c].clamp(0.0, cfg.n_pop);
        }
        // The diffusion approximation can push the total above the fixed
        // population; rescale onto the feasible region.
        let total: f64 = x.iter().sum();
        if total > cfg.n_pop {
            let scale = cfg.n_pop / total;
            for v in x.iter_mut() {
                *v *= scale;
            }
        }
        for c in 0..dim {
            out[step * dim + c] = x[c] as f32;
        }
    }
}

/// Pre-simulates a bank of paths. Path `i` uses its own RNG stream keyed by
/// `(seed, i)`, so the bank is deterministic and extensible.
pub fn simulate_paths(model: EpiModel, params: &[EpiParams], cfg: &SdeConfig, seed: u64) -> SdeGrid {
    let dim = model.state_dim();
    let n_steps = cfg.n_steps();
    let mut states = vec![0f32; params.len() * n_steps * dim];
    states
        .par_chunks_mut(n_steps * dim)
        .enumerate()
        .for_each(|(i, chunk)| {
            let mut rng = rng_from(seed, &[stream::SDE_PATH, i as u64]);
            simulate_one_path(model, &params[i], cfg, &mut rng, chunk);
        });
    SdeGrid { model, cfg: *cfg, seed, params: params.to_vec(), states, n_steps }
}

impl SdeGrid {
    pub fn n_paths(&self) -> usize {
        self.params.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// State vector of `path` at grid index `step`.
    pub fn state_at(&self, path: usize, step: usize) -> Vec<f64> {
        let dim = self.model.state_dim();
        let base = path * self.n_steps * dim + step * dim;
        self.states[base..base + dim].iter().map(|&v| v as f64).collect()
    }

    fn i_at(&self, path: usize, step: usize) -> f64 {
        let dim = self.model.state_dim();
        self.states[path * self.n_steps * dim + step * dim + self.model.i_index()] as f64
    }

    /// Nearest-grid-point lookup of the infectious count and its time
    /// derivative (central differences on the grid, one-sided at the ends).
    pub fn lookup_i(&self, path: usize, t: f64) -> (f64, f64) {
        let dt = self.cfg.dt;
        let last = self.n_steps - 1;
        let idx = ((t / dt).round().max(0.0) as usize).min(last);
        let i_val = self.i_at(path, idx);
        let didt = if idx == 0 {
            (self.i_at(path, 1) - self.i_at(path, 0)) / dt
        } else if idx == last {
            (self.i_at(path, last) - self.i_at(path, last - 1)) / dt
        } else {
            (self.i_at(path, idx + 1) - self.i_at(path, idx - 1)) / (2.0 * dt)
        };
        (i_val, didt)
    }

    /// Test/diagnostic constructor from explicit I-trajectories (other
    /// compartments zero).
    pub fn from_i_trajectories(model: EpiModel, cfg: SdeConfig, trajectories: &[Vec<f64>]) -> Self {
        let dim = model.state_dim();
        let n_steps = cfg.n_steps();
        let mut states = vec![0f32; trajectories.len() * n_steps * dim];
        for (p, traj) in trajectories.iter().enumerate() {
            assert_eq!(traj.len(), n_steps);
            for (s, &v) in traj.iter().enumerate() {
                states[p * n_steps * dim + s * dim + model.i_index()] = v as f32;
            }
        }
        let params = vec![EpiParams { beta: 0.0, gamma: 0.0, sigma: None }; trajectories.len()];
        SdeGrid { model, cfg, seed: 0, params, states, n_steps }
    }

    /// Binary cache: header, per-path parameters, `f32` trajectories and an
    /// FNV-1a checksum over everything before it.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut w = HashingWriter::new(BufWriter::new(std::fs::File::create(path)?));
        w.write_all(MAGIC)?;
        w.write_all(&[match self.model {
            EpiModel::Sir => 1u8,
            EpiModel::Seir => 2u8,
        }])?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.cfg.n_pop.to_le_bytes())?;
        w.write_all(&self.cfg.dt.to_le_bytes())?;
        w.write_all(&self.cfg.horizon.to_le_bytes())?;
        w.write_all(&(self.n_paths() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.beta.to_le_bytes())?;
            w.write_all(&p.gamma.to_le_bytes())?;
            w.write_all(&p.sigma.unwrap_or(f64::NAN).to_le_bytes())?;
        }
        for s in &self.states {
            w.write_all(&s.to_le_bytes())?;
        }
        let digest = w.digest();
        w.write_all(&digest.to_le_bytes())?;
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptFile {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut r = HashingReader::new(BufReader::new(std::fs::File::open(path)?));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let model = match r.read_u8()? {
            1 => EpiModel::Sir,
            2 => EpiModel::Seir,
            _ => return Err(corrupt("unknown model tag")),
        };
        let seed = r.read_u64()?;
        let n_pop = r.read_f64()?;
        let dt = r.read_f64()?;
        let horizon = r.read_f64()?;
        let n_paths = r.read_u64()? as usize;
        if n_paths == 0 || n_paths > 10_000_000 {
            return Err(corrupt("implausible path count"));
        }
        let cfg = SdeConfig { n_pop, dt, horizon, n_paths };
        let mut params = Vec::with_capacity(n_paths);
        for _ in 0..n_paths {
            let beta = r.read_f64()?;
            let gamma = r.read_f64()?;
            let sigma = r.read_f64()?;
            params.push(EpiParams {
                beta,
                gamma,
                sigma: if sigma.is_nan() { None } else { Some(sigma) },
            });
        }
        let n_steps = cfg.n_steps();
        let dim = model.state_dim();
        let mut states = vec![0f32; n_paths * n_steps * dim];
        let mut buf = vec![0u8; n_steps * dim * 4];
        for p in 0..n_paths {
            r.read_exact(&mut buf)?;
            for (k, chunk) in buf.chunks_exact(4).enumerate() {
                states[p * n_steps * dim + k] = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        let expected = r.digest();
        let stored = r.read_u64_unhashed()?;
        if stored != expected {
            return Err(corrupt("checksum mismatch"));
        }
        Ok(SdeGrid { model, cfg, seed, params, states, n_steps })
    }
}

const MAGIC: &[u8; 8] = b"MIBEDSG1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x100_0000_01b3;

fn fnv_update(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash = (*hash ^ b as u64).wrapping_mul(FNV_PRIME);
    }
}

struct HashingWriter<W: Write> {
    inner: W,
    hash: u64,
}

impl<W: Write> HashingWriter<W> {
    fn new(inner: W) -> Self {
        HashingWriter { inner, hash: FNV_OFFSET }
    }

    fn write_all(&mut self, buf: &[u8]) -> std::io::Result<()> {
        fnv_update(&mut self.hash, buf);
        self.inner.write_all(buf)
    }

    fn digest(&self) -> u64 {
        self.hash
    }

    fn into_inner(self) -> W {
        self.inner
    }
}

struct HashingReader<R: Read> {
    inner: R,
    hash: u64,
}

impl<R: Read> HashingReader<R> {
    fn new(inner: R) -> Self {
        HashingReader { inner, hash: FNV_OFFSET }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> std::io::Result<()> {
        self.inner.read_exact(buf)?;
        fnv_update(&mut self.hash, buf);
        Ok(())
    }

    fn read_u8(&mut self) -> std::io::Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn read_u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn read_f64(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn read_u64_unhashed(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn digest(&self) -> u64 {
        self.hash
    }
}

/// One noisy measurement of the infectious compartment.
pub fn observe(i_val: f64, phi: f64, rng: &mut ChaCha8Rng) -> u64 {
    let rate = (phi * i_val).max(MIN_POISSON_RATE);
    let draw: f64 = Poisson::new(rate).expect("positive rate").sample(rng);
    draw as u64
}

/// `∇_t log Poisson(y; φ I(t)) = (y/λ - 1) φ dI/dt` with `λ = max(φI, ε)`.
pub fn obs_logdensity_grad_t(y: f64, i_val: f64, didt: f64, phi: f64) -> f64 {
    let lambda = (phi * i_val).max(MIN_POISSON_RATE);
    (y / lambda - 1.0) * phi * didt
}

/// Log Poisson observation density of one measurement.
pub fn obs_logdensity(y: f64, i_val: f64, phi: f64) -> f64 {
    let lambda = (phi * i_val).max(MIN_POISSON_RATE);
    crate::util::poisson_logpmf(y, lambda)
}

/// PE or MD bound to pre-simulated path banks.
///
/// Critic encoding: PE feeds the raw rates `(β, γ)`; MD a one-hot model
/// indicator. Observed counts are scaled by `1/N` before entering the
/// critic so the network starts in a sane regime; the score-function
/// estimator undoes the scaling internally.
pub struct SdeTask {
    goal: Goal,
    grids: Vec<Arc<SdeGrid>>,
    pub phi: f64,
    design_dim: usize,
    design_box: (f64, f64),
    y_scale: f64,
}

/// A latent draw: which model bank and which path.
#[derive(Debug, Clone, Copy)]
pub struct SdeDraw {
    pub model_idx: usize,
    pub path: usize,
}

impl SdeTask {
    pub fn new_pe(grid: Arc<SdeGrid>, design_dim: usize, phi: f64) -> Result<Self> {
        if grid.model != EpiModel::Sir {
            return Err(Error::UnsupportedTask(
                "SDE parameter estimation runs on the SIR bank".into(),
            ));
        }
        let y_scale = 1.0 / grid.cfg.n_pop;
        let horizon = grid.cfg.horizon;
        Ok(SdeTask {
            goal: Goal::Pe,
            grids: vec![grid],
            phi,
            design_dim,
            design_box: (0.0, horizon),
            y_scale,
        })
    }

    pub fn new_md(
        sir: Arc<SdeGrid>,
        seir: Arc<SdeGrid>,
        design_dim: usize,
        phi: f64,
    ) -> Result<Self> {
        if sir.model != EpiModel::Sir || seir.model != EpiModel::Seir {
            return Err(Error::config("MD task expects (SIR, SEIR) banks in that order"));
        }
        if (sir.cfg.horizon - seir.cfg.horizon).abs() > 1e-9 {
            return Err(Error::config("model banks must share the time horizon"));
        }
        let y_scale = 1.0 / sir.cfg.n_pop;
        let horizon = sir.cfg.horizon;
        Ok(SdeTask {
            goal: Goal::Md,
            grids: vec![sir, seir],
            phi,
            design_dim,
            design_box: (0.0, horizon),
            y_scale,
        })
    }

    pub fn grid(&self, model_idx: usize) -> &SdeGrid {
        &self.grids[model_idx]
    }

    pub fn n_models(&self) -> usize {
        self.grids.len()
    }

    /// Scales raw counts into critic units.
    pub fn encode_y(&self, counts: &[f64]) -> Vec<f64> {
        counts.iter().map(|c| c * self.y_scale).collect()
    }

    /// Critic encoding of an explicit rate vector (posterior grids).
    pub fn encode_params(&self, beta: f64, gamma: f64) -> Vec<f64> {
        vec![beta, gamma]
    }

    pub fn one_hot_model(&self, model_idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.grids.len()];
        v[model_idx] = 1.0;
        v
    }

    /// Simulates raw (unscaled) counts for a draw.
    pub fn observe_counts(&self, draw: &SdeDraw, d: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let grid = &self.grids[draw.model_idx];
        d.iter()
            .map(|&t| {
                let (i_val, _) = grid.lookup_i(draw.path, t);
                observe(i_val, self.phi, rng) as f64
            })
            .collect()
    }
}

impl TaskSampler for SdeTask {
    type Latent = SdeDraw;
    type SimState = SdeDraw;

    fn goal(&self) -> Goal {
        self.goal
    }

    fn v_dim(&self) -> usize {
        match self.goal {
            Goal::Pe => 2,
            _ => self.grids.len(),
        }
    }

    fn y_dim(&self) -> usize {
        self.design_dim
    }

    fn design_dim(&self) -> usize {
        self.design_dim
    }

    fn design_box(&self) -> (f64, f64) {
        self.design_box
    }

    fn grad_route(&self) -> GradRoute {
        GradRoute::ScoreFn
    }

    fn sample_latent(&self, rng: &mut ChaCha8Rng) -> (SdeDraw, Vec<f64>) {
        let model_idx =
            if self.grids.len() > 1 { rng.random_range(0..self.grids.len()) } else { 0 };
        let path = rng.random_range(0..self.grids[model_idx].n_paths());
        let draw = SdeDraw { model_idx, path };
        let v = match self.goal {
            Goal::Pe => {
                let p = &self.grids[0].params[path];
                self.encode_params(p.beta, p.gamma)
            }
            _ => self.one_hot_model(model_idx),
        };
        (draw, v)
    }

    fn simulate(&self, latent: &SdeDraw, d: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, SdeDraw) {
        let counts = self.observe_counts(latent, d, rng);
        (self.encode_y(&counts), *latent)
    }

    fn obs_score(&self, state: &SdeDraw, y: &[f64], d: &[f64]) -> Option<Vec<f64>> {
        let grid = &self.grids[state.model_idx];
        Some(
            d.iter()
                .zip(y)
                .map(|(&t, &y_enc)| {
                    let (i_val, didt) = grid.lookup_i(state.path, t);
                    obs_logdensity_grad_t(y_enc / self.y_scale, i_val, didt, self.phi)
                })
                .collect(),
        )
    }
}
