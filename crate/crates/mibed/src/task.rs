//! Task abstraction binding a scientific goal to a variable-of-interest
//! sampler, a simulator and the gradient route its design sensitivities use.
//!
//! A task produces, per sample, a latent draw (what stays fixed across
//! epochs), an encoded variable of interest for the critic, and fresh data
//! through the model's sampling path. The retained per-epoch simulation
//! state is what the design-gradient estimators consume.

use crate::bounds::{BatchPair, ObservationScore, PathwiseJacobian};
use crate::error::{Error, Result};
use crate::util::{rng_from, stream};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Scientific goal of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Goal {
    /// Parameter estimation: v = θ.
    Pe,
    /// Model discrimination: v = m (parameters marginalised out).
    Md,
    /// Joint MD/PE: v = (θ_m, m).
    MdPe,
    /// Improving future predictions: v = y_T at a fixed future design.
    Fp,
}

impl std::fmt::Display for Goal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Goal::Pe => write!(f, "pe"),
            Goal::Md => write!(f, "md"),
            Goal::MdPe => write!(f, "mdpe"),
            Goal::Fp => write!(f, "fp"),
        }
    }
}

/// Which design-gradient estimator a model family supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradRoute {
    /// Differentiable sampling path: gradients through the Jacobian ∂y/∂d.
    Pathwise,
    /// Tractable observation density: score-function estimator through
    /// ∇_d log p(y | v, d, z).
    ScoreFn,
}

/// A goal bound to a model family.
///
/// `Latent` is drawn once per sample and fixed across epochs (Algorithm-style
/// training re-simulates data with fresh noise each epoch). `SimState` is
/// whatever the per-epoch simulation must retain so the design-gradient
/// estimators can be evaluated at the generating draw.
pub trait TaskSampler: Send + Sync {
    type Latent: Send + Sync + Clone;
    type SimState: Send + Sync;

    fn goal(&self) -> Goal;
    /// Encoded variable-of-interest dimension (constant within a run).
    fn v_dim(&self) -> usize;
    fn y_dim(&self) -> usize;
    fn design_dim(&self) -> usize;
    /// Box constraints applied to every design element.
    fn design_box(&self) -> (f64, f64);
    fn grad_route(&self) -> GradRoute;

    /// Draw one latent and its critic encoding.
    fn sample_latent(&self, rng: &mut ChaCha8Rng) -> (Self::Latent, Vec<f64>);

    /// Simulate data for a latent at design `d` with fresh noise.
    fn simulate(
        &self,
        latent: &Self::Latent,
        d: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> (Vec<f64>, Self::SimState);

    /// Diagonal of the design Jacobian ∂y/∂d at the retained draw
    /// (pathwise models only).
    fn jac_diag(&self, _state: &Self::SimState, _d: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// `∇_d log p(y | v, d, z)` at the generating draw (tractable
    /// observation models only).
    fn obs_score(&self, _state: &Self::SimState, _y: &[f64], _d: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// One epoch's simulation: the batch pairs plus the retained per-sample
/// states the design-gradient estimators need. Implements the capability
/// traits consumed by [`crate::bounds`].
pub struct SimulatedBatch<'a, T: TaskSampler> {
    pub task: &'a T,
    pub design: Vec<f64>,
    pub states: Vec<T::SimState>,
}

/// Simulates a batch: `latents[i]` produces `y_i` with a fresh per-sample
/// noise stream keyed by `(seed, epoch, i)`, then a uniform permutation
/// pairs the data column against the variables of interest as marginal
/// samples. Per-sample streams and an index-ordered reduction make the
/// result independent of worker threading.
pub fn simulate_batch<'a, T: TaskSampler>(
    task: &'a T,
    latents: &[T::Latent],
    v_enc: &[Vec<f64>],
    d: &[f64],
    seed: u64,
    epoch: u64,
) -> Result<(BatchPair, SimulatedBatch<'a, T>)> {
    let n = latents.len();
    let mut results: Vec<Option<(Vec<f64>, T::SimState)>> = (0..n).map(|_| None).collect();
    results
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, slot)| {
            let mut rng = rng_from(seed, &[stream::EPOCH_NOISE, epoch, i as u64]);
            *slot = Some(task.simulate(&latents[i], d, &mut rng));
        });
    let mut ys = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    for slot in results {
        let (y, s) = slot.expect("simulation filled every slot");
        ys.push(y);
        states.push(s);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut perm_rng = rng_from(seed, &[stream::SHUFFLE, epoch]);
    perm.shuffle(&mut perm_rng);
    let batch = BatchPair::new(v_enc.to_vec(), ys, perm)?;
    Ok((batch, SimulatedBatch { task, design: d.to_vec(), states }))
}

impl<T: TaskSampler> PathwiseJacobian for SimulatedBatch<'_, T> {
    fn design_dim(&self) -> usize {
        self.task.design_dim()
    }

    fn jac_t_vec(&self, gen: usize, g_y: &[f64]) -> Result<Vec<f64>> {
        let diag = self.task.jac_diag(&self.states[gen], &self.design).ok_or_else(|| {
            Error::contract(
                "model provides no design Jacobian; use the score-function estimator route",
            )
        })?;
        Ok(diag.iter().zip(g_y).map(|(j, g)| j * g).collect())
    }
}

impl<T: TaskSampler> ObservationScore for SimulatedBatch<'_, T> {
    fn design_dim(&self) -> usize {
        self.task.design_dim()
    }

    fn score(&self, gen: usize, y: &[f64]) -> Result<Vec<f64>> {
        self.task
            .obs_score(&self.states[gen], y, &self.design)
            .ok_or_else(|| {
                Error::contract(
                    "model declares no tractable observation density; use the pathwise route",
                )
            })
    }
}
