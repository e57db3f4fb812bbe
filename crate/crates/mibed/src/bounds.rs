//! Mutual-information lower bounds (NWJ, InfoNCE, JSD): values, gradients
//! with respect to the critic parameters, and gradients with respect to the
//! experimental designs via the pathwise (Jacobian) and score-function
//! estimators. Also the JSD→NWJ evaluation bridge.
//!
//! All bounds share the structure `E_joint[f(T)] - E_marg[g(T)]` for
//! scalar functions `f`, `g` of the critic output:
//!
//! | bound   | f(T)     | g(T)        |
//! |---------|----------|-------------|
//! | NWJ     | T        | e^{T-1}     |
//! | JSD     | -sp(-T)  | sp(T)       |
//! | InfoNCE | (matrix form, joint samples only)   |
//!
//! ψ-gradients pull `∇_ψ` inside the expectations (`f'(T) ∇_ψ T` terms);
//! design gradients either chain through the sampling-path Jacobian
//! (`∇_d T = J_yᵀ ∇_y T`) or, for models with a tractable observation
//! density, use the score `∇_d log q_y` of the generating draw.

use crate::diffnet::Critic;
use crate::error::{Error, Result};
use crate::util::{all_finite, kahan_mean, log_sum_exp, sigmoid, softplus, KahanSum, KahanVec};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Exponent clamp for the NWJ marginal term. The exponential makes NWJ
/// evaluations fluctuate heavily once the critic drifts; arguments above the
/// clamp are truncated and counted.
pub const NWJ_EXP_CLAMP: f64 = 80.0;

static NWJ_CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of NWJ exponent clamps since start (or the last reset).
pub fn nwj_clamp_events() -> u64 {
    NWJ_CLAMP_EVENTS.load(Ordering::Relaxed)
}

pub fn reset_nwj_clamp_events() {
    NWJ_CLAMP_EVENTS.store(0, Ordering::Relaxed);
}

fn clamp_nwj_exponent(t: f64) -> f64 {
    if t > NWJ_EXP_CLAMP {
        NWJ_CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        NWJ_EXP_CLAMP
    } else {
        t
    }
}

/// Which lower bound a run trains and records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Nwj,
    #[serde(rename = "infonce")]
    InfoNce,
    Jsd,
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundKind::Nwj => write!(f, "nwj"),
            BoundKind::InfoNce => write!(f, "infonce"),
            BoundKind::Jsd => write!(f, "jsd"),
        }
    }
}

impl std::str::FromStr for BoundKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nwj" => Ok(BoundKind::Nwj),
            "infonce" => Ok(BoundKind::InfoNce),
            "jsd" => Ok(BoundKind::Jsd),
            other => Err(Error::config(format!("unknown bound kind '{other}'"))),
        }
    }
}

/// One training batch: joint pairs `(v_i, y_i)` plus the permutation that
/// turns the data column into marginal samples (`marginal_y[i] = y[perm[i]]`).
/// The permutation is drawn uniformly; fixed points are tolerated.
#[derive(Debug, Clone)]
pub struct BatchPair {
    pub v_enc: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub perm: Vec<usize>,
}

impl BatchPair {
    pub fn new(v_enc: Vec<Vec<f64>>, y: Vec<Vec<f64>>, perm: Vec<usize>) -> Result<Self> {
        let n = v_enc.len();
        if n < 2 {
            return Err(Error::config("batch needs at least two samples"));
        }
        if y.len() != n || perm.len() != n {
            return Err(Error::config("batch columns have inconsistent lengths"));
        }
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(Error::config("marginal pairing is not a permutation"));
            }
            seen[p] = true;
        }
        let vd = v_enc[0].len();
        let yd = y[0].len();
        if v_enc.iter().any(|v| v.len() != vd) || y.iter().any(|r| r.len() != yd) {
            return Err(Error::config("ragged batch rows"));
        }
        Ok(BatchPair { v_enc, y, perm })
    }

    pub fn len(&self) -> usize {
        self.v_enc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_enc.is_empty()
    }

    fn concat(&self, i: usize, j: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(&self.v_enc[i]);
        buf.extend_from_slice(&self.y[j]);
    }
}

/// Critic outputs on the joint and marginal pairings of a batch.
pub fn critic_outputs(batch: &BatchPair, critic: &Critic) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = batch.len();
    let mut buf = Vec::with_capacity(critic.input_dim());
    let mut t_joint = Vec::with_capacity(n);
    let mut t_marg = Vec::with_capacity(n);
    for i in 0..n {
        batch.concat(i, i, &mut buf);
        if buf.len() != critic.input_dim() {
            return Err(Error::config("batch dimensions inconsistent with critic"));
        }
        t_joint.push(critic.forward_concat(&buf));
        batch.concat(i, batch.perm[i], &mut buf);
        t_marg.push(critic.forward_concat(&buf));
    }
    Ok((t_joint, t_marg))
}

/// K×K critic matrix with `t(i, j) = T(v_j, y_i)`; `y_i` was simulated under
/// `v_i`, so the diagonal holds the joint pairs.
#[derive(Debug, Clone)]
pub struct TMatrix {
    k: usize,
    data: Vec<f64>,
}

impl TMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::config("InfoNCE needs K >= 2"));
        }
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::config("T matrix must be square"));
        }
        Ok(TMatrix { k, data: rows.into_iter().flatten().collect() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }
}

/// Evaluates the critic on all (v_j, y_i) pairs of a batch.
pub fn critic_t_matrix(batch: &BatchPair, critic: &Critic) -> Result<TMatrix> {
    let k = batch.len();
    if k < 2 {
        return Err(Error::config("InfoNCE needs K >= 2"));
    }
    let mut buf = Vec::with_capacity(critic.input_dim());
    let mut data = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            batch.concat(j, i, &mut buf);
            data.push(critic.forward_concat(&buf));
        }
    }
    Ok(TMatrix { k, data })
}

fn check_finite(name: &str, t_joint: &[f64], t_marg: &[f64]) -> Result<()> {
    if !all_finite(t_joint) || !all_finite(t_marg) {
        let max_marg = t_marg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::numerical(format!(
            "non-finite critic outputs in {name}; max T_marg = {max_marg}"
        )));
    }
    Ok(())
}

/// NWJ lower bound: `mean(T_joint) - e^{-1} mean(exp(T_marg))`, with the
/// marginal exponent clamped at [`NWJ_EXP_CLAMP`].
pub fn nwj_value(t_joint: &[f64], t_marg: &[f64]) -> Result<f64> {
    check_finite("nwj_value", t_joint, t_marg)?;
    let joint = kahan_mean(t_joint);
    let mut acc = KahanSum::new();
    for &t in t_marg {
        acc.add(clamp_nwj_exponent(t).exp());
    }
    Ok(joint - (-1.0f64).exp() * acc.value() / t_marg.len() as f64)
}

/// InfoNCE lower bound, log-sum-exp stabilised. Always <= log K.
pub fn infonce_value(t: &TMatrix) -> Result<f64> {
    let k = t.k();
    let ln_k = (k as f64).ln();
    let mut acc = KahanSum::new();
    for i in 0..k {
        let row = t.row(i);
        if !all_finite(row) {
            return Err(Error::numerical("non-finite critic outputs in infonce_value"));
        }
        acc.add(t.get(i, i) - log_sum_exp(row));
    }
    Ok(acc.value() / k as f64 + ln_k)
}

/// JSD lower bound: `mean(-sp(-T_joint)) - mean(sp(T_marg))`.
pub fn jsd_value(t_joint: &[f64], t_marg: &[f64]) -> f64 {
    let mut joint = KahanSum::new();
    for &t in t_joint {
        joint.add(-softplus(-t));
    }
    let mut marg = KahanSum::new();
    for &t in t_marg {
        marg.add(softplus(t));
    }
    joint.value() / t_joint.len() as f64 - marg.value() / t_marg.len() as f64
}

/// Amortised logistic-regression loss over the batch:
/// `mean(ln(1+e^{-T_joint})) + mean(ln(1+e^{T_marg}))`.
/// Satisfies `jsd_value = -lfire_loss` exactly per batch.
pub fn lfire_loss(t_joint: &[f64], t_marg: &[f64]) -> f64 {
    let mut joint = KahanSum::new();
    for &t in t_joint {
        joint.add(softplus(-t));
    }
    let mut marg = KahanSum::new();
    for &t in t_marg {
        marg.add(softplus(t));
    }
    joint.value() / t_joint.len() as f64 + marg.value() / t_marg.len() as f64
}

/// Evaluates a JSD-trained critic through the NWJ bound.
///
/// The JSD-optimal critic is the posterior/prior log ratio while the
/// NWJ-optimal critic is `1 +` that ratio, so the critic is shifted by +1
/// before the NWJ evaluation.
pub fn jsd_to_nwj_eval(t_joint: &[f64], t_marg: &[f64]) -> Result<f64> {
    let shifted_joint: Vec<f64> = t_joint.iter().map(|t| t + 1.0).collect();
    let shifted_marg: Vec<f64> = t_marg.iter().map(|t| t + 1.0).collect();
    nwj_value(&shifted_joint, &shifted_marg)
}

/// Per-sample weights `(f'(T_joint), -g'(T_marg))` multiplying `∇ T` in both
/// the ψ-gradient and the pathwise design gradient (NWJ and JSD).
pub fn bound_weights(kind: BoundKind, t_joint: &[f64], t_marg: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    match kind {
        BoundKind::Nwj => Ok((
            vec![1.0; t_joint.len()],
            t_marg
                .iter()
                .map(|&t| -((clamp_nwj_exponent(t) - 1.0).exp()))
                .collect(),
        )),
        BoundKind::Jsd => Ok((
            t_joint.iter().map(|&t| sigmoid(-t)).collect(),
            t_marg.iter().map(|&t| -sigmoid(t)).collect(),
        )),
        BoundKind::InfoNce => Err(Error::config(
            "InfoNCE weights are matrix-valued; handled by the InfoNCE paths",
        )),
    }
}

/// Per-sample score-function weights `(a_i, b_i)` such that the design
/// gradient is `mean_i a_i·∇_d log q_{y_i} + mean_i b_i·∇_d log q̃_{y_i}`
/// (NWJ and JSD rows of the tractable-observation estimator).
pub fn scorefn_weights(kind: BoundKind, t_joint: &[f64], t_marg: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    match kind {
        BoundKind::Nwj => Ok((
            t_joint.to_vec(),
            t_marg
                .iter()
                .map(|&t| -((clamp_nwj_exponent(t) - 1.0).exp()))
                .collect(),
        )),
        BoundKind::Jsd => Ok((
            t_joint.iter().map(|&t| -softplus(-t)).collect(),
            t_marg.iter().map(|&t| -softplus(t)).collect(),
        )),
        BoundKind::InfoNce => Err(Error::config(
            "InfoNCE score-function weights are row-valued; use scorefn_row_weights",
        )),
    }
}

/// InfoNCE per-row score-function weights
/// `B_i = T_ii - ln((1/K) Σ_j e^{T_ij})`.
///
/// `B_i` depends on the batch only through `y_i` and the fixed set of
/// variables of interest, so the product-measure score collapses to the
/// per-row form `mean_i B_i · ∇_d log q_{y_i}` with the same expectation.
pub fn scorefn_row_weights(t: &TMatrix) -> Vec<f64> {
    let k = t.k();
    let ln_k = (k as f64).ln();
    (0..k).map(|i| t.get(i, i) - log_sum_exp(t.row(i)) + ln_k).collect()
}

/// Design-sensitivity capability of a pathwise-differentiable model, bound
/// to one simulated batch. `gen` indexes the generating draw.
pub trait PathwiseJacobian {
    fn design_dim(&self) -> usize;
    /// Returns `J_yᵀ g` where `(J_y)_{kj} = ∂y_k/∂d_j` at the retained draw.
    fn jac_t_vec(&self, gen: usize, g_y: &[f64]) -> Result<Vec<f64>>;
}

/// Tractable-observation capability: the score `∇_d log q(y | v, d, z)` of
/// the generating draw, evaluated at given data.
pub trait ObservationScore {
    fn design_dim(&self) -> usize;
    fn score(&self, gen: usize, y: &[f64]) -> Result<Vec<f64>>;
}

/// Gradient of the bound with respect to all critic parameters, plus the
/// bound value of the batch.
pub struct PsiGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Sample-average gradient of the bound with respect to ψ.
pub fn bound_grad_psi(kind: BoundKind, batch: &BatchPair, critic: &Critic) -> Result<PsiGrad> {
    match kind {
        BoundKind::Nwj | BoundKind::Jsd => {
            let (t_joint, t_marg) = critic_outputs(batch, critic)?;
            check_finite("bound_grad_psi", &t_joint, &t_marg)?;
            let value = match kind {
                BoundKind::Nwj => nwj_value(&t_joint, &t_marg)?,
                _ => jsd_value(&t_joint, &t_marg),
            };
            let (w_joint, w_marg) = bound_weights(kind, &t_joint, &t_marg)?;
            let n = batch.len() as f64;
            let mut acc = KahanVec::new(critic.n_params());
            let mut tmp = vec![0.0; critic.n_params()];
            let mut buf = Vec::with_capacity(critic.input_dim());
            for i in 0..batch.len() {
                batch.concat(i, i, &mut buf);
                tmp.fill(0.0);
                critic.backward(&buf, 1.0, Some(&mut tmp), None)?;
                acc.add_scaled(&tmp, w_joint[i] / n);
                batch.concat(i, batch.perm[i], &mut buf);
                tmp.fill(0.0);
                critic.backward(&buf, 1.0, Some(&mut tmp), None)?;
                acc.add_scaled(&tmp, w_marg[i] / n);
            }
            Ok(PsiGrad { value, grad: acc.value() })
        }
        BoundKind::InfoNce => {
            let t = critic_t_matrix(batch, critic)?;
            let value = infonce_value(&t)?;
            let k = t.k();
            let kf = k as f64;
            let mut acc = KahanVec::new(critic.n_params());
            let mut tmp = vec![0.0; critic.n_params()];
            let mut buf = Vec::with_capacity(critic.input_dim());
            for i in 0..k {
                let row = t.row(i);
                let lse = log_sum_exp(row);
                for j in 0..k {
                    let softmax = (row[j] - lse).exp();
                    let w = ((if i == j { 1.0 } else { 0.0 }) - softmax) / kf;
                    if w == 0.0 {
                        continue;
                    }
                    batch.concat(j, i, &mut buf);
                    tmp.fill(0.0);
                    critic.backward(&buf, 1.0, Some(&mut tmp), None)?;
                    acc.add_scaled(&tmp, w);
                }
            }
            Ok(PsiGrad { value, grad: acc.value() })
        }
    }
}

/// Pathwise design gradient (differentiable sampling path): each `∇_d T`
/// expands as `J_yᵀ ∇_y T`, with the marginal-term Jacobian taken at the
/// permuted generating draw.
pub fn bound_grad_design_pathwise(
    kind: BoundKind,
    batch: &BatchPair,
    critic: &Critic,
    jac: &dyn PathwiseJacobian,
) -> Result<Vec<f64>> {
    let d_dim = jac.design_dim();
    match kind {
        BoundKind::Nwj | BoundKind::Jsd => {
            let (t_joint, t_marg) = critic_outputs(batch, critic)?;
            check_finite("bound_grad_design_pathwise", &t_joint, &t_marg)?;
            let (w_joint, w_marg) = bound_weights(kind, &t_joint, &t_marg)?;
            let n = batch.len() as f64;
            let mut acc = KahanVec::new(d_dim);
            let mut buf = Vec::with_capacity(critic.input_dim());
            let mut gin = vec![0.0; critic.input_dim()];
            let v_dim = batch.v_enc[0].len();
            for i in 0..batch.len() {
                batch.concat(i, i, &mut buf);
                critic.backward(&buf, 0.0, None, Some(&mut gin))?;
                acc.add_scaled(&jac.jac_t_vec(i, &gin[v_dim..])?, w_joint[i] / n);
                let p = batch.perm[i];
                batch.concat(i, p, &mut buf);
                critic.backward(&buf, 0.0, None, Some(&mut gin))?;
                acc.add_scaled(&jac.jac_t_vec(p, &gin[v_dim..])?, w_marg[i] / n);
            }
            Ok(acc.value())
        }
        BoundKind::InfoNce => {
            let t = critic_t_matrix(batch, critic)?;
            let k = t.k();
            let kf = k as f64;
            let v_dim = batch.v_enc[0].len();
            let y_dim = batch.y[0].len();
            let mut acc = KahanVec::new(d_dim);
            let mut buf = Vec::with_capacity(critic.input_dim());
            let mut gin = vec![0.0; critic.input_dim()];
            for i in 0..k {
                let row = t.row(i);
                let lse = log_sum_exp(row);
                // row_g = ∇_y T_ii - Σ_j softmax_ij ∇_y T_ij, all at y_i.
                let mut row_g = KahanVec::new(y_dim);
                for j in 0..k {
                    let softmax = (row[j] - lse).exp();
                    let w = (if i == j { 1.0 } else { 0.0 }) - softmax;
                    if w == 0.0 {
                        continue;
                    }
                    batch.concat(j, i, &mut buf);
                    critic.backward(&buf, 0.0, None, Some(&mut gin))?;
                    row_g.add_scaled(&gin[v_dim..], w);
                }
                acc.add_scaled(&jac.jac_t_vec(i, &row_g.value())?, 1.0 / kf);
            }
            Ok(acc.value())
        }
    }
}

/// Score-function design gradient for models with a tractable observation
/// density: the data never needs differentiating, only `∇_d log q_y` of the
/// generating draw.
pub fn bound_grad_design_scorefn(
    kind: BoundKind,
    batch: &BatchPair,
    critic: &Critic,
    score: &dyn ObservationScore,
) -> Result<Vec<f64>> {
    let d_dim = score.design_dim();
    match kind {
        BoundKind::Nwj | BoundKind::Jsd => {
            let (t_joint, t_marg) = critic_outputs(batch, critic)?;
            check_finite("bound_grad_design_scorefn", &t_joint, &t_marg)?;
            let (a, b) = scorefn_weights(kind, &t_joint, &t_marg)?;
            let n = batch.len() as f64;
            let mut acc = KahanVec::new(d_dim);
            for i in 0..batch.len() {
                acc.add_scaled(&score.score(i, &batch.y[i])?, a[i] / n);
                let p = batch.perm[i];
                acc.add_scaled(&score.score(p, &batch.y[p])?, b[i] / n);
            }
            Ok(acc.value())
        }
        BoundKind::InfoNce => {
            let t = critic_t_matrix(batch, critic)?;
            let weights = scorefn_row_weights(&t);
            let k = t.k() as f64;
            let mut acc = KahanVec::new(d_dim);
            for (i, &w) in weights.iter().enumerate() {
                acc.add_scaled(&score.score(i, &batch.y[i])?, w / k);
            }
            Ok(acc.value())
        }
    }
}

/// Everything one training step needs: the bound value and both gradients,
/// computed with shared forward/backward passes.
pub struct TrainGrads {
    pub value: f64,
    pub grad_psi: Vec<f64>,
    pub grad_d: Vec<f64>,
}

/// Design-gradient route bound to a simulated batch.
pub enum RouteView<'a> {
    Pathwise(&'a dyn PathwiseJacobian),
    ScoreFn(&'a dyn ObservationScore),
}

impl RouteView<'_> {
    fn design_dim(&self) -> usize {
        match self {
            RouteView::Pathwise(j) => j.design_dim(),
            RouteView::ScoreFn(s) => s.design_dim(),
        }
    }
}

/// Combined value / ψ-gradient / design-gradient of one batch. Matches the
/// dedicated entry points exactly; it only avoids re-running forward and
/// backward passes.
pub fn train_grads(
    kind: BoundKind,
    batch: &BatchPair,
    critic: &Critic,
    route: &RouteView<'_>,
) -> Result<TrainGrads> {
    let d_dim = route.design_dim();
    match kind {
        BoundKind::Nwj | BoundKind::Jsd => {
            let (t_joint, t_marg) = critic_outputs(batch, critic)?;
            check_finite("train_grads", &t_joint, &t_marg)?;
            let value = match kind {
                BoundKind::Nwj => nwj_value(&t_joint, &t_marg)?,
                _ => jsd_value(&t_joint, &t_marg),
            };
            let (w_joint, w_marg) = bound_weights(kind, &t_joint, &t_marg)?;
            let n = batch.len() as f64;
            let mut acc_psi = KahanVec::new(critic.n_params());
            let mut acc_d = KahanVec::new(d_dim);
            let mut tmp = vec![0.0; critic.n_params()];
            let mut buf = Vec::with_capacity(critic.input_dim());
            let mut gin = vec![0.0; critic.input_dim()];
            let v_dim = batch.v_enc[0].len();
            let pathwise = matches!(route, RouteView::Pathwise(_));
            let (sa, sb) = if pathwise {
                (Vec::new(), Vec::new())
            } else {
                scorefn_weights(kind, &t_joint, &t_marg)?
            };
            for i in 0..batch.len() {
                batch.concat(i, i, &mut buf);
                tmp.fill(0.0);
                critic.backward(&buf, 1.0, Some(&mut tmp), if pathwise { Some(&mut gin) } else { None })?;
                acc_psi.add_scaled(&tmp, w_joint[i] / n);
                match route {
                    RouteView::Pathwise(jac) => {
                        acc_d.add_scaled(&jac.jac_t_vec(i, &gin[v_dim..])?, w_joint[i] / n);
                    }
                    RouteView::ScoreFn(score) => {
                        acc_d.add_scaled(&score.score(i, &batch.y[i])?, sa[i] / n);
                    }
                }
                let p = batch.perm[i];
                batch.concat(i, p, &mut buf);
                tmp.fill(0.0);
                critic.backward(&buf, 1.0, Some(&mut tmp), if pathwise { Some(&mut gin) } else { None })?;
                acc_psi.add_scaled(&tmp, w_marg[i] / n);
                match route {
                    RouteView::Pathwise(jac) => {
                        acc_d.add_scaled(&jac.jac_t_vec(p, &gin[v_dim..])?, w_marg[i] / n);
                    }
                    RouteView::ScoreFn(score) => {
                        acc_d.add_scaled(&score.score(p, &batch.y[p])?, sb[i] / n);
                    }
                }
            }
            Ok(TrainGrads { value, grad_psi: acc_psi.value(), grad_d: acc_d.value() })
        }
        BoundKind::InfoNce => {
            let t = critic_t_matrix(batch, critic)?;
            let value = infonce_value(&t)?;
            let k = t.k();
            let kf = k as f64;
            let v_dim = batch.v_enc[0].len();
            let y_dim = batch.y[0].len();
            let mut acc_psi = KahanVec::new(critic.n_params());
            let mut acc_d = KahanVec::new(d_dim);
            let mut tmp = vec![0.0; critic.n_params()];
            let mut buf = Vec::with_capacity(critic.input_dim());
            let mut gin = vec![0.0; critic.input_dim()];
            let pathwise = matches!(route, RouteView::Pathwise(_));
            let row_weights = if pathwise { Vec::new() } else { scorefn_row_weights(&t) };
            for i in 0..k {
                let row = t.row(i);
                let lse = log_sum_exp(row);
                let mut row_g = KahanVec::new(y_dim);
                for j in 0..k {
                    let softmax = (row[j] - lse).exp();
                    let w = (if i == j { 1.0 } else { 0.0 }) - softmax;
                    if w == 0.0 {
                        continue;
                    }
                    batch.concat(j, i, &mut buf);
                    tmp.fill(0.0);
                    critic.backward(&buf, 1.0, Some(&mut tmp), if pathwise { Some(&mut gin) } else { None })?;
                    acc_psi.add_scaled(&tmp, w / kf);
                    if pathwise {
                        row_g.add_scaled(&gin[v_dim..], w);
                    }
                }
                match route {
                    RouteView::Pathwise(jac) => {
                        acc_d.add_scaled(&jac.jac_t_vec(i, &row_g.value())?, 1.0 / kf);
                    }
                    RouteView::ScoreFn(score) => {
                        acc_d.add_scaled(&score.score(i, &batch.y[i])?, row_weights[i] / kf);
                    }
                }
            }
            Ok(TrainGrads { value, grad_psi: acc_psi.value(), grad_d: acc_d.value() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{simulate_batch, SimulatedBatch, TaskSampler};
    use crate::toy::{build_task, ToyConfig, ToyModel, ToyTask};
    use crate::util::{rng_from, l2_norm};
    use crate::task::Goal;
    use proptest::prelude::*;

    const E_INV: f64 = 0.36787944117144233;

    fn toy_batch<'a>(
        task: &'a ToyTask,
        n: usize,
        d: &[f64],
        seed: u64,
    ) -> (BatchPair, SimulatedBatch<'a, ToyTask>) {
        let mut rng = rng_from(seed, &[50]);
        let mut latents = Vec::new();
        let mut vs = Vec::new();
        for _ in 0..n {
            let (l, v) = task.sample_latent(&mut rng);
            latents.push(l);
            vs.push(v);
        }
        simulate_batch(task, &latents, &vs, d, seed, 0).unwrap()
    }

    fn random_critic(dims: &[usize], seed: u64) -> Critic {
        let mut rng = rng_from(seed, &[51]);
        Critic::new(dims, &mut rng).unwrap()
    }

    fn bound_value(kind: BoundKind, batch: &BatchPair, critic: &Critic) -> f64 {
        match kind {
            BoundKind::Nwj => {
                let (tj, tm) = critic_outputs(batch, critic).unwrap();
                nwj_value(&tj, &tm).unwrap()
            }
            BoundKind::Jsd => {
                let (tj, tm) = critic_outputs(batch, critic).unwrap();
                jsd_value(&tj, &tm)
            }
            BoundKind::InfoNce => infonce_value(&critic_t_matrix(batch, critic).unwrap()).unwrap(),
        }
    }

    #[test]
    fn nwj_constant_critic_values() {
        let ones = vec![1.0; 64];
        assert!((nwj_value(&ones, &ones).unwrap()).abs() < 1e-12);
        let zeros = vec![0.0; 64];
        assert!((nwj_value(&zeros, &zeros).unwrap() + E_INV).abs() < 1e-12);
    }

    #[test]
    fn nwj_nonfinite_reports_max_marg() {
        let err = nwj_value(&[0.0], &[f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn nwj_clamps_huge_exponents() {
        reset_nwj_clamp_events();
        let before = nwj_clamp_events();
        let v = nwj_value(&[0.0, 0.0], &[200.0, 0.0]).unwrap();
        assert!(v.is_finite());
        assert!(nwj_clamp_events() > before);
    }

    #[test]
    fn infonce_constant_matrix_is_zero() {
        let t = TMatrix::from_rows(vec![vec![0.7; 5]; 5]).unwrap();
        assert!(infonce_value(&t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn infonce_two_by_two_example() {
        // T(v_2, y_1) = ln 2, T(v_1, y_2) = ln 3, diagonal zero.
        let t = TMatrix::from_rows(vec![vec![0.0, 2.0f64.ln()], vec![3.0f64.ln(), 0.0]]).unwrap();
        let expected = 0.5 * ((2.0f64 / 3.0).ln() + 0.5f64.ln());
        assert!((infonce_value(&t).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 0.5493).abs() < 1e-4);
    }

    #[test]
    fn infonce_requires_k_at_least_two() {
        assert!(TMatrix::from_rows(vec![vec![0.0]]).is_err());
    }

    #[test]
    fn jsd_constant_critic_values() {
        let zeros = vec![0.0; 16];
        assert!((jsd_value(&zeros, &zeros) + 2.0 * 2.0f64.ln()).abs() < 1e-12);
        // Constant critic value -(sp(c) + sp(-c)) is maximised at c = 0.
        let at = |c: f64| jsd_value(&vec![c; 16], &vec![c; 16]);
        assert!(at(0.0) > at(0.5));
        assert!(at(0.0) > at(-0.5));
    }

    #[test]
    fn lfire_zero_critic_and_limits() {
        let zeros = vec![0.0; 8];
        assert!((lfire_loss(&zeros, &zeros) - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        // T_joint -> +inf, T_marg -> -inf drives the loss to zero.
        assert!(lfire_loss(&[500.0], &[-500.0]).abs() < 1e-12);
    }

    #[test]
    fn jsd_to_nwj_eval_zero_critic() {
        let zeros = vec![0.0; 32];
        assert!(jsd_to_nwj_eval(&zeros, &zeros).unwrap().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn jsd_equals_negated_lfire(tj in prop::collection::vec(-30.0f64..30.0, 2..40),
                                    tm in prop::collection::vec(-30.0f64..30.0, 2..40)) {
            let jsd = jsd_value(&tj, &tm);
            let lfire = lfire_loss(&tj, &tm);
            prop_assert!((jsd + lfire).abs() < 1e-12);
        }

        #[test]
        fn infonce_never_exceeds_log_k(rows in prop::collection::vec(
            prop::collection::vec(-50.0f64..50.0, 6), 6)) {
            let t = TMatrix::from_rows(rows).unwrap();
            let v = infonce_value(&t).unwrap();
            prop_assert!(v <= (6.0f64).ln());
        }
    }

    #[test]
    fn zero_critic_jsd_psi_gradient_is_half_difference() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let critic = Critic::zeros(&[12, 8, 1]).unwrap();
        let (batch, _) = toy_batch(&task, 32, &vec![1.0; 10], 7);
        let g = bound_grad_psi(BoundKind::Jsd, &batch, &critic).unwrap();
        // σ(0) = 1/2 on both terms; with a zero network only the output bias
        // has a nonzero gradient (1 for every sample), so the halves cancel.
        let n = critic.n_params();
        assert!((g.grad[n - 1] - 0.0).abs() < 1e-14);
        assert_eq!(g.value, jsd_value(&vec![0.0; 32], &vec![0.0; 32]));
    }

    #[test]
    fn nwj_marginal_weight_at_t_one_is_unity() {
        let (wj, wm) = bound_weights(BoundKind::Nwj, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(wj, vec![1.0, 1.0]);
        for w in wm {
            assert!((w + 1.0).abs() < 1e-15); // -e^{T-1} = -1 at T = 1
        }
    }

    #[test]
    fn psi_gradient_matches_finite_differences_all_kinds() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let d = vec![0.8; 10];
        let (batch, _) = toy_batch(&task, 24, &d, 13);
        for kind in [BoundKind::Nwj, BoundKind::Jsd, BoundKind::InfoNce] {
            let critic = random_critic(&[12, 10, 8, 1], 14);
            let g = bound_grad_psi(kind, &batch, &critic).unwrap();
            let p0 = critic.params_flat();
            let h = 1e-5;
            let mut idx_rng = rng_from(15, &[kind as u64]);
            for _ in 0..20 {
                let k = idx_rng.random_range(0..p0.len());
                let mut c = critic.clone();
                let mut p = p0.clone();
                p[k] += h;
                c.set_params_flat(&p).unwrap();
                let up = bound_value(kind, &batch, &c);
                p[k] = p0[k] - h;
                c.set_params_flat(&p).unwrap();
                let dn = bound_value(kind, &batch, &c);
                let fd = (up - dn) / (2.0 * h);
                let denom = fd.abs().max(g.grad[k].abs());
                if denom > 1e-8 {
                    assert!(
                        (g.grad[k] - fd).abs() / denom < 1e-4,
                        "{kind:?} param {k}: {} vs {fd}",
                        g.grad[k]
                    );
                }
            }
        }
    }

    use rand::Rng;

    #[test]
    fn pathwise_gradient_matches_finite_differences() {
        // Common random numbers: simulate_batch keys noise off (seed, epoch,
        // i), so re-simulating at d ± h freezes every draw.
        let cfg = ToyConfig::default();
        let h = 1e-5;
        for (mi, model) in ToyModel::ALL.iter().enumerate() {
            let task = build_task(Goal::Pe, Some(*model), cfg).unwrap();
            let mut d_rng = rng_from(20 + mi as u64, &[1]);
            let d: Vec<f64> = (0..10).map(|_| d_rng.random_range(-1.9..1.9)).collect();
            let mut latents = Vec::new();
            let mut vs = Vec::new();
            let mut rng = rng_from(21, &[mi as u64]);
            for _ in 0..24 {
                let (l, v) = task.sample_latent(&mut rng);
                latents.push(l);
                vs.push(v);
            }
            for kind in [BoundKind::Nwj, BoundKind::Jsd, BoundKind::InfoNce] {
                let critic = random_critic(&[12, 10, 8, 1], 23 + mi as u64);
                let (batch, sim) = simulate_batch(&task, &latents, &vs, &d, 99, 5).unwrap();
                let g = bound_grad_design_pathwise(kind, &batch, &critic, &sim).unwrap();
                let mut fd = vec![0.0; d.len()];
                for k in 0..d.len() {
                    let mut dp = d.clone();
                    dp[k] += h;
                    let (bp, _) = simulate_batch(&task, &latents, &vs, &dp, 99, 5).unwrap();
                    let up = bound_value(kind, &bp, &critic);
                    dp[k] = d[k] - h;
                    let (bm, _) = simulate_batch(&task, &latents, &vs, &dp, 99, 5).unwrap();
                    let dn = bound_value(kind, &bm, &critic);
                    fd[k] = (up - dn) / (2.0 * h);
                }
                let diff: Vec<f64> = fd.iter().zip(&g).map(|(a, b)| a - b).collect();
                let rel = l2_norm(&diff) / l2_norm(&fd).max(1e-12);
                assert!(rel < 1e-4, "{model:?} {kind:?}: rel {rel}\nfd {fd:?}\ngrad {g:?}");
            }
        }
    }

    #[test]
    fn critic_ignoring_y_has_zero_design_gradient() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let d = vec![1.2; 10];
        let (batch, sim) = toy_batch(&task, 16, &d, 31);
        // Zero the first-layer weight columns that read y.
        let critic = {
            let mut c = random_critic(&[12, 8, 1], 32);
            let mut p = c.params_flat();
            for o in 0..8 {
                for i in 2..12 {
                    p[o * 12 + i] = 0.0;
                }
            }
            c.set_params_flat(&p).unwrap();
            c
        };
        for kind in [BoundKind::Nwj, BoundKind::Jsd, BoundKind::InfoNce] {
            let g = bound_grad_design_pathwise(kind, &batch, &critic, &sim).unwrap();
            assert!(l2_norm(&g) < 1e-14, "{kind:?}: {g:?}");
        }
    }

    #[test]
    fn duplicating_samples_preserves_design_gradient() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let d = vec![0.9; 10];
        let mut rng = rng_from(41, &[1]);
        let mut latents = Vec::new();
        let mut vs = Vec::new();
        for _ in 0..12 {
            let (l, v) = task.sample_latent(&mut rng);
            latents.push(l);
            vs.push(v);
        }
        let (batch, sim) = simulate_batch(&task, &latents, &vs, &d, 7, 0).unwrap();
        // Duplicate every sample; marginal pairs replicate blockwise.
        let mut v2 = batch.v_enc.clone();
        v2.extend(batch.v_enc.clone());
        let mut y2 = batch.y.clone();
        y2.extend(batch.y.clone());
        let mut perm2 = batch.perm.clone();
        perm2.extend(batch.perm.iter().map(|&p| p + 12));
        let batch2 = BatchPair::new(v2, y2, perm2).unwrap();
        let mut states2: Vec<_> = sim.states.clone();
        states2.extend(sim.states.clone());
        let sim2 = SimulatedBatch { task: &task, design: d.clone(), states: states2 };

        let critic = random_critic(&[12, 8, 1], 42);
        for kind in [BoundKind::Nwj, BoundKind::Jsd, BoundKind::InfoNce] {
            let g1 = bound_grad_design_pathwise(kind, &batch, &critic, &sim).unwrap();
            let g2 = bound_grad_design_pathwise(kind, &batch2, &critic, &sim2).unwrap();
            for (a, b) in g1.iter().zip(&g2) {
                assert!((a - b).abs() < 1e-10, "{kind:?}");
            }
        }
    }

    #[test]
    fn batch_reordering_preserves_values_and_gradients() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let d = vec![1.1; 10];
        let (batch, sim) = toy_batch(&task, 40, &d, 55);
        let critic = random_critic(&[12, 10, 1], 56);

        // Reorder samples by a fixed shuffle sigma; conjugate the pairing.
        let n = batch.len();
        let mut sigma: Vec<usize> = (0..n).collect();
        let mut srng = rng_from(57, &[1]);
        use rand::seq::SliceRandom;
        sigma.shuffle(&mut srng);
        let mut inv = vec![0; n];
        for (new, &old) in sigma.iter().enumerate() {
            inv[old] = new;
        }
        let v2: Vec<_> = sigma.iter().map(|&o| batch.v_enc[o].clone()).collect();
        let y2: Vec<_> = sigma.iter().map(|&o| batch.y[o].clone()).collect();
        let perm2: Vec<usize> = sigma.iter().map(|&o| inv[batch.perm[o]]).collect();
        let batch2 = BatchPair::new(v2, y2, perm2).unwrap();
        let states2: Vec<_> = sigma.iter().map(|&o| sim.states[o].clone()).collect();
        let sim2 = SimulatedBatch { task: &task, design: d.clone(), states: states2 };

        for kind in [BoundKind::Nwj, BoundKind::Jsd] {
            let a = bound_value(kind, &batch, &critic);
            let b = bound_value(kind, &batch2, &critic);
            assert!((a - b).abs() < 1e-10, "{kind:?} value");
            let ga = bound_grad_design_pathwise(kind, &batch, &critic, &sim).unwrap();
            let gb = bound_grad_design_pathwise(kind, &batch2, &critic, &sim2).unwrap();
            for (x, y) in ga.iter().zip(&gb) {
                assert!((x - y).abs() < 1e-10, "{kind:?} grad");
            }
            let pa = bound_grad_psi(kind, &batch, &critic).unwrap();
            let pb = bound_grad_psi(kind, &batch2, &critic).unwrap();
            for (x, y) in pa.grad.iter().zip(&pb.grad) {
                assert!((x - y).abs() < 1e-10, "{kind:?} psi grad");
            }
        }
        // InfoNCE value is permutation invariant as well.
        let a = bound_value(BoundKind::InfoNce, &batch, &critic);
        let b = bound_value(BoundKind::InfoNce, &batch2, &critic);
        assert!((a - b).abs() < 1e-10);
    }

    struct ZeroScore {
        dim: usize,
    }

    impl ObservationScore for ZeroScore {
        fn design_dim(&self) -> usize {
            self.dim
        }
        fn score(&self, _gen: usize, _y: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0; self.dim])
        }
    }

    #[test]
    fn scorefn_gradient_zero_when_density_ignores_design() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let d = vec![1.0; 10];
        let (batch, _) = toy_batch(&task, 16, &d, 61);
        let critic = random_critic(&[12, 8, 1], 62);
        let score = ZeroScore { dim: 10 };
        for kind in [BoundKind::Nwj, BoundKind::Jsd, BoundKind::InfoNce] {
            let g = bound_grad_design_scorefn(kind, &batch, &critic, &score).unwrap();
            assert!(l2_norm(&g) == 0.0, "{kind:?}");
        }
    }

    #[test]
    fn toy_batch_lacks_observation_score() {
        let task = build_task(Goal::Pe, None, ToyConfig::default()).unwrap();
        let d = vec![1.0; 10];
        let (batch, sim) = toy_batch(&task, 8, &d, 71);
        let critic = random_critic(&[12, 8, 1], 72);
        let err = bound_grad_design_scorefn(BoundKind::Jsd, &batch, &critic, &sim).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
    }

    #[test]
    fn train_grads_agrees_with_dedicated_entry_points() {
        let task = build_task(Goal::MdPe, None, ToyConfig::default()).unwrap();
        let d = vec![0.5; 10];
        let (batch, sim) = toy_batch(&task, 20, &d, 81);
        for kind in [BoundKind::Nwj, BoundKind::Jsd, BoundKind::InfoNce] {
            let critic = random_critic(&[15, 10, 1], 82);
            let combined = train_grads(kind, &batch, &critic, &RouteView::Pathwise(&sim)).unwrap();
            let psi = bound_grad_psi(kind, &batch, &critic).unwrap();
            let dg = bound_grad_design_pathwise(kind, &batch, &critic, &sim).unwrap();
            assert_eq!(combined.value, psi.value);
            for (a, b) in combined.grad_psi.iter().zip(&psi.grad) {
                assert!((a - b).abs() < 1e-13);
            }
            for (a, b) in combined.grad_d.iter().zip(&dg) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }
}
