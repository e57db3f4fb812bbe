//! Linear, logarithmic and square-root implicit models with additive
//! Gaussian and Gamma noise, their design Jacobians, priors and task
//! builders.
//!
//! The sampling paths are, element-wise over the design vector,
//!
//! ```text
//! y = θ0 + θ1 · g(d) + ε + ν,   g ∈ { d, ln max(|d|, 1e-4), sqrt |d| },
//! ```
//!
//! with ε ~ N(0, 1) and ν ~ Γ(2, 2) (shape–rate by default; the Gamma
//! convention is configurable). The `|d|` clip removes the logarithmic
//! singularity and makes the path locally constant inside the clipped
//! region, so the Jacobian is zero there.

use crate::error::{Error, Result};
use crate::task::{Goal, GradRoute, TaskSampler};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

/// Lower clip applied to `|d|` in the logarithmic model.
pub const LOG_CLIP: f64 = 1e-4;

/// Maximum parameter dimension over the toy family; MDPE encodings pad to it.
pub const MAX_PARAM_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyModel {
    #[serde(rename = "toy-linear")]
    Linear,
    #[serde(rename = "toy-log")]
    Log,
    #[serde(rename = "toy-sqrt")]
    Sqrt,
}

impl ToyModel {
    pub const ALL: [ToyModel; 3] = [ToyModel::Linear, ToyModel::Log, ToyModel::Sqrt];

    pub fn id(&self) -> &'static str {
        match self {
            ToyModel::Linear => "toy-linear",
            ToyModel::Log => "toy-log",
            ToyModel::Sqrt => "toy-sqrt",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ToyModel::Linear => 0,
            ToyModel::Log => 1,
            ToyModel::Sqrt => 2,
        }
    }

    pub fn from_index(i: usize) -> ToyModel {
        Self::ALL[i]
    }
}

impl std::str::FromStr for ToyModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy-linear" => Ok(ToyModel::Linear),
            "toy-log" => Ok(ToyModel::Log),
            "toy-sqrt" => Ok(ToyModel::Sqrt),
            other => Err(Error::config(format!("unknown toy model id '{other}'"))),
        }
    }
}

/// Offset and slope of one toy model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTheta {
    pub offset: f64,
    pub slope: f64,
}

/// One noise realisation: `eps` standard normal, `gamma` Gamma draws,
/// mutually independent across coordinates and between each other.
#[derive(Debug, Clone)]
pub struct ToyNoise {
    pub eps: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// How to read the `Γ(2, 2)` noise notation. Shape–scale (mean 4,
/// variance 8) is the default: it is the reading under which the reference
/// mutual-information values of all four tasks line up, and is exposed here
/// so the alternative remains one config flip away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GammaConvention {
    /// Shape 2, rate 2: mean 1, variance 0.5.
    ShapeRate,
    /// Shape 2, scale 2: mean 4, variance 8.
    #[default]
    ShapeScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoiseKind {
    /// Gaussian plus Gamma noise (the standard toy setting).
    GaussGamma {
        #[serde(default)]
        gamma: GammaConvention,
    },
    /// Pure Gaussian noise; enables the analytic linear-Gaussian MI oracle.
    GaussOnly,
}

impl Default for NoiseKind {
    fn default() -> Self {
        NoiseKind::GaussGamma { gamma: GammaConvention::default() }
    }
}

impl NoiseKind {
    /// Mean of one noise coordinate ε + ν.
    pub fn mean(&self) -> f64 {
        match self {
            NoiseKind::GaussGamma { gamma: GammaConvention::ShapeRate } => 1.0,
            NoiseKind::GaussGamma { gamma: GammaConvention::ShapeScale } => 4.0,
            NoiseKind::GaussOnly => 0.0,
        }
    }

    /// Variance of one noise coordinate.
    pub fn variance(&self) -> f64 {
        match self {
            NoiseKind::GaussGamma { gamma: GammaConvention::ShapeRate } => 1.5,
            NoiseKind::GaussGamma { gamma: GammaConvention::ShapeScale } => 9.0,
            NoiseKind::GaussOnly => 1.0,
        }
    }

    /// Density of the Gamma component (zero mass at `u <= 0`).
    pub fn gamma_density(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match self {
            NoiseKind::GaussGamma { gamma: GammaConvention::ShapeRate } => 4.0 * u * (-2.0 * u).exp(),
            NoiseKind::GaussGamma { gamma: GammaConvention::ShapeScale } => {
                0.25 * u * (-0.5 * u).exp()
            }
            NoiseKind::GaussOnly => 0.0,
        }
    }
}

/// Static configuration of the toy family.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ToyConfig {
    pub design_dim: usize,
    /// Box constraint applied to every design element.
    pub design_box: (f64, f64),
    pub noise: NoiseKind,
    /// Prior standard deviation of both offset and slope.
    pub prior_sd: f64,
    /// Fixed future design for the FP task.
    pub d_future: Option<f64>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            design_dim: 10,
            design_box: (-2.0, 2.0),
            noise: NoiseKind::default(),
            prior_sd: 3.0,
            d_future: Some(4.0),
        }
    }
}

/// Deterministic response `g_m(d)` of one coordinate.
pub fn response(m: ToyModel, d: f64) -> f64 {
    match m {
        ToyModel::Linear => d,
        ToyModel::Log => d.abs().max(LOG_CLIP).ln(),
        ToyModel::Sqrt => d.abs().sqrt(),
    }
}

/// Derivative `g_m'(d)` consistent with the clipped path: zero inside the
/// clipped region of the log model and at the square-root kink.
pub fn response_deriv(m: ToyModel, d: f64) -> f64 {
    match m {
        ToyModel::Linear => 1.0,
        ToyModel::Log => {
            if d.abs() > LOG_CLIP {
                1.0 / d
            } else {
                0.0
            }
        }
        ToyModel::Sqrt => {
            if d == 0.0 {
                0.0
            } else {
                d.signum() / (2.0 * d.abs().sqrt())
            }
        }
    }
}

/// Samples θ from the N(0, prior_sd² I) prior.
pub fn sample_theta(prior_sd: f64, rng: &mut ChaCha8Rng) -> ToyTheta {
    let offset: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * prior_sd;
    let slope: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * prior_sd;
    ToyTheta { offset, slope }
}

/// Draws one noise realisation of dimension `dim`.
pub fn sample_noise(kind: NoiseKind, dim: usize, rng: &mut ChaCha8Rng) -> ToyNoise {
    let eps: Vec<f64> = (0..dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let gamma = match kind {
        NoiseKind::GaussGamma { gamma } => {
            let dist = match gamma {
                GammaConvention::ShapeRate => Gamma::new(2.0, 0.5).unwrap(),
                GammaConvention::ShapeScale => Gamma::new(2.0, 2.0).unwrap(),
            };
            (0..dim).map(|_| dist.sample(rng)).collect()
        }
        NoiseKind::GaussOnly => vec![0.0; dim],
    };
    ToyNoise { eps, gamma }
}

/// Samples of the summed noise ε + ν, used to fit the reference KDE.
pub fn noise_sum_samples(kind: NoiseKind, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = sample_noise(kind, n, rng);
    noise.eps.iter().zip(&noise.gamma).map(|(e, g)| e + g).collect()
}

/// Element-wise sampling path `y = θ0 + θ1 g_m(d) + ε + ν`.
pub fn sample_path_toy(m: ToyModel, theta: &ToyTheta, d: &[f64], noise: &ToyNoise) -> Vec<f64> {
    debug_assert_eq!(noise.eps.len(), d.len());
    d.iter()
        .enumerate()
        .map(|(k, &dk)| theta.offset + theta.slope * response(m, dk) + noise.eps[k] + noise.gamma[k])
        .collect()
}

/// Diagonal of the design Jacobian ∂y/∂d: entry `k` is `θ1 · g_m'(d_k)`.
pub fn jacobian_toy(m: ToyModel, theta: &ToyTheta, d: &[f64]) -> Vec<f64> {
    d.iter().map(|&dk| theta.slope * response_deriv(m, dk)).collect()
}

/// Latent draw of one sample: what stays fixed across training epochs.
#[derive(Debug, Clone)]
pub struct ToyLatent {
    pub model: ToyModel,
    /// `None` for MD, where θ is marginalised (re-drawn per simulation).
    pub theta: Option<ToyTheta>,
    /// FP only: the future observation paired with this θ.
    pub y_future: Option<f64>,
}

/// Per-simulation retained state for design gradients.
#[derive(Debug, Clone)]
pub struct ToySim {
    pub model: ToyModel,
    pub theta: ToyTheta,
}

/// A scientific goal bound to the toy family.
#[derive(Debug, Clone)]
pub struct ToyTask {
    goal: Goal,
    /// Candidate models: a single one for PE/FP, all three for MD/MDPE.
    models: Vec<ToyModel>,
    cfg: ToyConfig,
}

/// Builds the task specification for a goal.
///
/// PE and FP operate on a single model (the linear one unless stated
/// otherwise); MD and MDPE draw the indicator uniformly over all three.
/// FP requires `cfg.d_future`.
pub fn build_task(goal: Goal, model: Option<ToyModel>, cfg: ToyConfig) -> Result<ToyTask> {
    if cfg.design_dim == 0 {
        return Err(Error::config("design dimension must be at least 1"));
    }
    if cfg.design_box.0 >= cfg.design_box.1 {
        return Err(Error::config("design box must be a nonempty interval"));
    }
    let models = match goal {
        Goal::Pe | Goal::Fp => vec![model.unwrap_or(ToyModel::Linear)],
        Goal::Md | Goal::MdPe => ToyModel::ALL.to_vec(),
    };
    if goal == Goal::Fp && cfg.d_future.is_none() {
        return Err(Error::config("FP task requires a fixed future design d_T"));
    }
    Ok(ToyTask { goal, models, cfg })
}

impl ToyTask {
    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    pub fn models(&self) -> &[ToyModel] {
        &self.models
    }

    fn one_hot(&self, m: ToyModel) -> Vec<f64> {
        let mut v = vec![0.0; 3];
        v[m.index()] = 1.0;
        v
    }
}

impl TaskSampler for ToyTask {
    type Latent = ToyLatent;
    type SimState = ToySim;

    fn goal(&self) -> Goal {
        self.goal
    }

    fn v_dim(&self) -> usize {
        match self.goal {
            Goal::Pe => MAX_PARAM_DIM,
            Goal::Md => 3,
            Goal::MdPe => MAX_PARAM_DIM + 3,
            Goal::Fp => 1,
        }
    }

    fn y_dim(&self) -> usize {
        self.cfg.design_dim
    }

    fn design_dim(&self) -> usize {
        self.cfg.design_dim
    }

    fn design_box(&self) -> (f64, f64) {
        self.cfg.design_box
    }

    fn grad_route(&self) -> GradRoute {
        GradRoute::Pathwise
    }

    fn sample_latent(&self, rng: &mut ChaCha8Rng) -> (ToyLatent, Vec<f64>) {
        match self.goal {
            Goal::Pe => {
                let theta = sample_theta(self.cfg.prior_sd, rng);
                let v = vec![theta.offset, theta.slope];
                (ToyLatent { model: self.models[0], theta: Some(theta), y_future: None }, v)
            }
            Goal::Md => {
                let m = self.models[rng.random_range(0..self.models.len())];
                (ToyLatent { model: m, theta: None, y_future: None }, self.one_hot(m))
            }
            Goal::MdPe => {
                let m = self.models[rng.random_range(0..self.models.len())];
                let theta = sample_theta(self.cfg.prior_sd, rng);
                let mut v = vec![theta.offset, theta.slope];
                v.extend(self.one_hot(m));
                (ToyLatent { model: m, theta: Some(theta), y_future: None }, v)
            }
            Goal::Fp => {
                let m = self.models[0];
                let theta = sample_theta(self.cfg.prior_sd, rng);
                let d_t = self.cfg.d_future.expect("checked in build_task");
                let noise = sample_noise(self.cfg.noise, 1, rng);
                let y_t = sample_path_toy(m, &theta, &[d_t], &noise)[0];
                (ToyLatent { model: m, theta: Some(theta), y_future: Some(y_t) }, vec![y_t])
            }
        }
    }

    fn simulate(&self, latent: &ToyLatent, d: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, ToySim) {
        // MD marginalises θ: it is part of the simulation randomness, drawn
        // through the same prior sampler, then discarded from the encoding.
        let theta = match latent.theta {
            Some(t) => t,
            None => sample_theta(self.cfg.prior_sd, rng),
        };
        let noise = sample_noise(self.cfg.noise, d.len(), rng);
        let y = sample_path_toy(latent.model, &theta, d, &noise);
        (y, ToySim { model: latent.model, theta })
    }

    fn jac_diag(&self, state: &ToySim, d: &[f64]) -> Option<Vec<f64>> {
        Some(jacobian_toy(state.model, &state.theta, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{mean_se, rng_from};

    #[test]
    fn path_substitution_linear() {
        let noise = ToyNoise { eps: vec![0.5], gamma: vec![1.0] };
        let y = sample_path_toy(
            ToyModel::Linear,
            &ToyTheta { offset: 2.0, slope: 3.0 },
            &[1.0],
            &noise,
        );
        assert_eq!(y, vec![6.5]);
    }

    #[test]
    fn path_clip_rule_log_model() {
        let noise = ToyNoise { eps: vec![0.0], gamma: vec![0.0] };
        let y = sample_path_toy(
            ToyModel::Log,
            &ToyTheta { offset: 1.0, slope: 1.0 },
            &[0.0],
            &noise,
        );
        assert!((y[0] - (1.0 + LOG_CLIP.ln())).abs() < 1e-12);
        assert!((y[0] + 8.2103).abs() < 1e-3);
    }

    #[test]
    fn path_sqrt_model() {
        let noise = ToyNoise { eps: vec![0.0], gamma: vec![0.0] };
        let y = sample_path_toy(
            ToyModel::Sqrt,
            &ToyTheta { offset: 0.0, slope: 1.0 },
            &[-2.0],
            &noise,
        );
        assert!((y[0] - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn jacobian_linear_is_constant_slope() {
        let j = jacobian_toy(ToyModel::Linear, &ToyTheta { offset: 0.0, slope: 3.0 }, &[0.3, -1.7]);
        assert_eq!(j, vec![3.0, 3.0]);
    }

    #[test]
    fn jacobian_log_clip_region_is_zero() {
        let th = ToyTheta { offset: 0.0, slope: 1.0 };
        let j = jacobian_toy(ToyModel::Log, &th, &[0.5, 1e-6]);
        assert!((j[0] - 2.0).abs() < 1e-12);
        assert_eq!(j[1], 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences_away_from_kinks() {
        let th = ToyTheta { offset: -1.3, slope: 2.4 };
        let noise = ToyNoise { eps: vec![0.7, -0.2, 0.1], gamma: vec![0.4, 1.1, 0.05] };
        let d = [0.8, -1.4, 1.9];
        let h = 1e-6;
        for m in ToyModel::ALL {
            let j = jacobian_toy(m, &th, &d);
            for k in 0..d.len() {
                let mut dp = d;
                dp[k] += h;
                let up = sample_path_toy(m, &th, &dp, &noise)[k];
                dp[k] = d[k] - h;
                let dn = sample_path_toy(m, &th, &dp, &noise)[k];
                let fd = (up - dn) / (2.0 * h);
                let rel = ((j[k] - fd) / fd).abs();
                assert!(rel < 1e-7, "model {m:?} coord {k}: {} vs {fd}", j[k]);
            }
        }
    }

    #[test]
    fn noise_mean_matches_gamma_convention() {
        let kind = NoiseKind::default();
        let mut rng = rng_from(5, &[1]);
        let samples = noise_sum_samples(kind, 1_000_000, &mut rng);
        let (mean, se) = mean_se(&samples);
        assert!(
            (mean - kind.mean()).abs() < 4.0 * se,
            "mean {mean} vs expected {} (se {se})",
            kind.mean()
        );
    }

    #[test]
    fn log_response_monotone_toward_clip_and_continuous() {
        let mut prev = response(ToyModel::Log, 2.0);
        for i in 1..200 {
            let d = 2.0 * (1.0 - i as f64 / 200.0) + 1e-6;
            let r = response(ToyModel::Log, d);
            assert!(r <= prev);
            prev = r;
        }
        // Continuity at the clip boundary.
        let below = response(ToyModel::Log, LOG_CLIP * 0.999);
        let above = response(ToyModel::Log, LOG_CLIP * 1.001);
        assert!((below - above).abs() < 2e-3);
    }

    #[test]
    fn md_marginalisation_matches_explicit_theta_draw() {
        // Discarding θ before or after simulation gives bit-identical data
        // when the RNG stream is shared.
        let cfg = ToyConfig::default();
        let md = build_task(Goal::Md, None, cfg).unwrap();
        let latent = ToyLatent { model: ToyModel::Sqrt, theta: None, y_future: None };
        let d = vec![1.0; cfg.design_dim];

        let mut rng = rng_from(11, &[2]);
        let (y_marginal, state) = md.simulate(&latent, &d, &mut rng);

        let mut rng = rng_from(11, &[2]);
        let theta = sample_theta(cfg.prior_sd, &mut rng);
        let noise = sample_noise(cfg.noise, d.len(), &mut rng);
        let y_explicit = sample_path_toy(ToyModel::Sqrt, &theta, &d, &noise);

        assert_eq!(y_marginal, y_explicit);
        assert_eq!(state.theta, theta);
    }

    #[test]
    fn encodings_per_goal() {
        let cfg = ToyConfig::default();
        let md = build_task(Goal::Md, None, cfg).unwrap();
        let mut rng = rng_from(3, &[7]);
        let (_, v) = md.sample_latent(&mut rng);
        assert_eq!(v.len(), 3);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));

        let mdpe = build_task(Goal::MdPe, None, cfg).unwrap();
        assert_eq!(mdpe.v_dim(), 5);
        let (_, v) = mdpe.sample_latent(&mut rng);
        assert_eq!(v.len(), 5);

        let fp = build_task(Goal::Fp, None, cfg).unwrap();
        let (latent, v) = fp.sample_latent(&mut rng);
        assert_eq!(v.len(), 1);
        assert_eq!(latent.y_future.unwrap(), v[0]);
    }

    #[test]
    fn fp_without_future_design_is_config_error() {
        let cfg = ToyConfig { d_future: None, ..ToyConfig::default() };
        assert!(build_task(Goal::Fp, None, cfg).is_err());
    }

    #[test]
    fn fp_joint_sample_shares_theta() {
        // The future observation and the current data must come from the
        // same θ draw with independent noises.
        let cfg = ToyConfig::default();
        let fp = build_task(Goal::Fp, None, cfg).unwrap();
        let mut rng = rng_from(9, &[1]);
        let (latent, _) = fp.sample_latent(&mut rng);
        let theta = latent.theta.unwrap();
        let d = vec![2.0; cfg.design_dim];
        let (_, state) = fp.simulate(&latent, &d, &mut rng);
        assert_eq!(state.theta, theta);
    }
}
