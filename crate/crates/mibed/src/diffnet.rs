//! Minimal dense feed-forward network with a scalar output, exact
//! reverse-mode gradients with respect to both parameters and inputs, and an
//! Adam optimizer. This is the only "ML framework" in the crate: critics are
//! small (a few thousand parameters), so everything is plain `f64` loops.
//!
//! Hidden layers use ReLU, the output layer is linear. Parameters can be
//! flattened into a single vector (`params_flat` / `set_params_flat`) so one
//! optimizer state covers the whole network.

use crate::error::{Error, Result};
use crate::util::all_finite;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Scalar-output dense network `T(v, y)`.
///
/// `layer_dims` is `[input, hidden..., 1]`. Weights are stored row-major
/// per layer with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Critic {
    /// Fan-in-scaled uniform initialisation (He-style), suited to the ReLU
    /// hidden layers.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut critic = Self::zeros(layer_dims)?;
        for l in 0..critic.n_layers() {
            let fan_in = critic.layer_dims[l] as f64;
            let bound = (6.0 / fan_in).sqrt();
            for w in critic.weights[l].iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(critic)
    }

    /// All-zero network; forward output is identically zero.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::config("critic needs at least input and output layers"));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(Error::config("critic output dimension must be 1"));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("critic layer dimensions must be positive"));
        }
        let weights = (0..layer_dims.len() - 1)
            .map(|l| vec![0.0; layer_dims[l] * layer_dims[l + 1]])
            .collect();
        let biases = (0..layer_dims.len() - 1)
            .map(|l| vec![0.0; layer_dims[l + 1]])
            .collect();
        Ok(Critic { layer_dims: layer_dims.to_vec(), weights, biases })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flattened parameter vector: per layer, weights (row-major) then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in 0..self.n_layers() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::config(format!(
                "parameter vector length {} does not match network size {}",
                p.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for l in 0..self.n_layers() {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = self.biases[l].len();
            self.biases[l].copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| all_finite(w)) && self.biases.iter().all(|b| all_finite(b))
    }

    fn check_input(&self, v_enc: &[f64], y: &[f64]) -> Result<()> {
        if v_enc.len() + y.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input dimension mismatch: dim(v)={} + dim(y)={} != critic input {}",
                v_enc.len(),
                y.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// `T(v, y)`: pure function of the weights and inputs.
    pub fn forward(&self, v_enc: &[f64], y: &[f64]) -> Result<f64> {
        self.check_input(v_enc, y)?;
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(v_enc);
        x.extend_from_slice(y);
        Ok(self.forward_concat(&x))
    }

    /// Forward pass on a pre-concatenated input.
    pub fn forward_concat(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut act = x.to_vec();
        let mut next = Vec::new();
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            next.clear();
            next.resize(n_out, 0.0);
            for o in 0..n_out {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                let mut z = self.biases[l][o];
                for i in 0..n_in {
                    z += row[i] * act[i];
                }
                next[o] = if l + 1 < self.n_layers() { z.max(0.0) } else { z };
            }
            std::mem::swap(&mut act, &mut next);
        }
        act[0]
    }

    /// One reverse pass. Returns `T` and, on request,
    ///
    /// * accumulates `weight * ∇_ψ T` into `acc_psi` (flat layout), and
    /// * writes `∇_x T` into `grad_input` (full concatenated input).
    pub fn backward(
        &self,
        x: &[f64],
        weight: f64,
        mut acc_psi: Option<&mut [f64]>,
        mut grad_input: Option<&mut [f64]>,
    ) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input dimension mismatch: got {}, critic expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(acc) = acc_psi.as_deref() {
            if acc.len() != self.n_params() {
                return Err(Error::config("gradient accumulator length mismatch"));
            }
        }

        // Forward, caching post-activation values per layer.
        let n_layers = self.n_layers();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let prev = &acts[l];
            let mut out = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                let mut z = self.biases[l][o];
                for i in 0..n_in {
                    z += row[i] * prev[i];
                }
                out[o] = if l + 1 < n_layers { z.max(0.0) } else { z };
            }
            acts.push(out);
        }
        let value = acts[n_layers][0];

        // Backward. delta holds dT/d(post-activation of layer l+1).
        let mut delta = vec![1.0];
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let prev = &acts[l];
            // ReLU mask applies to this layer's own output (hidden only).
            if l + 1 < n_layers {
                for (o, d) in delta.iter_mut().enumerate() {
                    if acts[l + 1][o] <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            if let Some(acc) = acc_psi.as_deref_mut() {
                let off = self.flat_offset(l);
                let wlen = n_in * n_out;
                for o in 0..n_out {
                    let d = weight * delta[o];
                    if d != 0.0 {
                        let row = &mut acc[off + o * n_in..off + (o + 1) * n_in];
                        for i in 0..n_in {
                            row[i] += d * prev[i];
                        }
                    }
                    acc[off + wlen + o] += d;
                }
            }
            if l > 0 || grad_input.is_some() {
                let mut prev_delta = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            prev_delta[i] += d * row[i];
                        }
                    }
                }
                if l == 0 {
                    if let Some(gi) = grad_input.as_deref_mut() {
                        gi.copy_from_slice(&prev_delta);
                    }
                }
                delta = prev_delta;
            }
        }

        if let Some(acc) = acc_psi.as_deref() {
            if !all_finite(acc) {
                let layer = self.first_nonfinite_layer(acc);
                return Err(Error::numerical(format!(
                    "non-finite parameter gradient in layer {layer}"
                )));
            }
        }
        if let Some(gi) = grad_input.as_deref() {
            if !all_finite(gi) {
                return Err(Error::numerical("non-finite input gradient in layer 0"));
            }
        }
        Ok(value)
    }

    fn flat_offset(&self, layer: usize) -> usize {
        let mut off = 0;
        for l in 0..layer {
            off += self.weights[l].len() + self.biases[l].len();
        }
        off
    }

    fn first_nonfinite_layer(&self, flat: &[f64]) -> usize {
        for l in 0..self.n_layers() {
            let off = self.flat_offset(l);
            let len = self.weights[l].len() + self.biases[l].len();
            if !all_finite(&flat[off..off + len]) {
                return l;
            }
        }
        0
    }

    /// `∇_ψ T(v, y)` as a flat vector, plus the forward value.
    pub fn grad_params(&self, v_enc: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(v_enc, y)?;
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(v_enc);
        x.extend_from_slice(y);
        let mut grad = vec![0.0; self.n_params()];
        let value = self.backward(&x, 1.0, Some(&mut grad), None)?;
        Ok((value, grad))
    }

    /// `∇_y T(v, y)`: the factor consumed by the design-gradient chain rule.
    pub fn grad_input_y(&self, v_enc: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(v_enc, y)?;
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(v_enc);
        x.extend_from_slice(y);
        let mut gi = vec![0.0; self.input_dim()];
        let value = self.backward(&x, 1.0, None, Some(&mut gi))?;
        Ok((value, gi.split_off(v_enc.len())))
    }

    /// Versioned JSON checkpoint. Values round-trip bit-exactly.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let ckpt = CheckpointV1 {
            version: 1,
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: CheckpointV1 = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != 1 {
            return Err(Error::CorruptFile {
                path: path.display().to_string(),
                reason: format!("unsupported checkpoint version {}", ckpt.version),
            });
        }
        let critic = Critic {
            layer_dims: ckpt.layer_dims,
            weights: ckpt.weights,
            biases: ckpt.biases,
        };
        for l in 0..critic.n_layers() {
            let (n_in, n_out) = (critic.layer_dims[l], critic.layer_dims[l + 1]);
            if critic.weights[l].len() != n_in * n_out || critic.biases[l].len() != n_out {
                return Err(Error::CorruptFile {
                    path: path.display().to_string(),
                    reason: format!("layer {l} shape mismatch"),
                });
            }
        }
        Ok(critic)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointV1 {
    version: u32,
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Adam optimizer state for one flat vector. Canonical defaults
/// `(β1, β2, ε) = (0.9, 0.999, 1e-8)`.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64, dim: usize) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `x` in place. `maximise` flips the
    /// update to ascent; both the critic parameters and the designs are
    /// ascended in this crate.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], maximise: bool) -> Result<()> {
        if x.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::config(format!(
                "adam dimension mismatch: state {}, x {}, grad {}",
                self.m.len(),
                x.len(),
                grad.len()
            )));
        }
        if !all_finite(grad) {
            return Err(Error::numerical("non-finite gradient passed to adam"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let sign = if maximise { 1.0 } else { -1.0 };
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            x[i] += sign * self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
