//! Small numerical helpers shared across the crate: overflow-safe softplus /
//! log-sum-exp, compensated summation, quadrature and seed derivation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Overflow-safe softplus `ln(1 + e^z)`, branching at `z = 0`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic sigmoid, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ e^{x_i}` with the usual max shift. Returns `-inf` on an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// `ln (1/n) Σ e^{x_i}`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Neumaier-compensated accumulator. Used wherever the spec of an operation
/// requires permutation-stable reductions.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Element-wise Neumaier-compensated accumulator for gradient vectors, so
/// reductions are stable under batch reordering.
#[derive(Debug, Clone)]
pub struct KahanVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanVec {
    pub fn new(n: usize) -> Self {
        KahanVec { sum: vec![0.0; n], comp: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// Adds `w * xs` element-wise.
    pub fn add_scaled(&mut self, xs: &[f64], w: f64) {
        debug_assert_eq!(xs.len(), self.sum.len());
        for i in 0..xs.len() {
            let x = w * xs[i];
            let t = self.sum[i] + x;
            if self.sum[i].abs() >= x.abs() {
                self.comp[i] += (self.sum[i] - t) + x;
            } else {
                self.comp[i] += (x - t) + self.sum[i];
            }
            self.sum[i] = t;
        }
    }

    pub fn value(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }
}

/// Compensated sum of a slice.
pub fn kahan_sum(xs: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Compensated mean of a slice.
pub fn kahan_mean(xs: &[f64]) -> f64 {
    kahan_sum(xs) / xs.len() as f64
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = kahan_mean(xs);
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-node weights of composite Simpson quadrature on `n` uniformly spaced
/// points with spacing `step`: `∫ f ≈ Σ w_i f_i`. Even interval counts use
/// the 1/3 rule; an odd trailing interval is closed with a Simpson 3/8
/// segment, so any `n >= 2` is accepted (`n = 2` degrades to the trapezoid).
pub fn simpson_weights(n: usize, step: f64) -> Vec<f64> {
    assert!(n >= 2, "quadrature needs at least two points");
    let mut w = vec![0.0; n];
    if n == 2 {
        w[0] = 0.5 * step;
        w[1] = 0.5 * step;
        return w;
    }
    let intervals = n - 1;
    let simpson_end = if intervals % 2 == 0 {
        n - 1
    } else if n >= 4 {
        // Simpson 3/8 on the last three intervals.
        let c = 3.0 * step / 8.0;
        w[n - 4] += c;
        w[n - 3] += 3.0 * c;
        w[n - 2] += 3.0 * c;
        w[n - 1] += c;
        n - 4
    } else {
        n - 1
    };
    if simpson_end >= 2 {
        let c = step / 3.0;
        w[0] += c;
        w[simpson_end] += c;
        for i in 1..simpson_end {
            w[i] += if i % 2 == 1 { 4.0 * c } else { 2.0 * c };
        }
    }
    w
}

/// Composite Simpson quadrature on uniformly spaced values.
pub fn simpson(values: &[f64], step: f64) -> f64 {
    let w = simpson_weights(values.len(), step);
    let mut acc = KahanSum::new();
    for (v, wi) in values.iter().zip(&w) {
        acc.add(v * wi);
    }
    acc.value()
}

/// `n` evenly spaced points covering `[a, b]` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + h * i as f64).collect()
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Natural log of the Gamma function (Lanczos approximation, g = 7).
/// Accurate to ~1e-13 relative for the positive arguments used here.
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * x).sin().abs().ln() - ln_gamma(1.0 - x)
    } else {
        let z = x - 1.0;
        let mut a = C[0];
        for (i, &c) in C.iter().enumerate().skip(1) {
            a += c / (z + i as f64);
        }
        let t = z + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + a.ln()
    }
}

/// Log of the Poisson probability mass `ln p(y; λ)`.
pub fn poisson_logpmf(y: f64, lambda: f64) -> f64 {
    y * lambda.ln() - lambda - ln_gamma(y + 1.0)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent RNG stream from a master seed and a list of tags
/// (purpose id, epoch, sample index, ...). Identical inputs always produce
/// the identical stream, which is what makes batched simulation
/// thread-count invariant.
pub fn rng_from(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6c62_272e_07bb_0142;
    let mut mixed = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0x2545_f491_4f6c_dd1d);
        mixed ^= splitmix64(&mut state).rotate_left(17);
    }
    let mut key = [0u8; 32];
    for chunk in 0..4 {
        let w = splitmix64(&mut state) ^ mixed.wrapping_mul(chunk as u64 + 1);
        key[chunk * 8..(chunk + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream tags for [`rng_from`]. Kept in one place so independent subsystems
/// never collide.
pub mod stream {
    pub const CRITIC_INIT: u64 = 1;
    pub const DESIGN_INIT: u64 = 2;
    pub const VINT: u64 = 3;
    pub const EPOCH_NOISE: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const VALIDATION: u64 = 6;
    pub const SDE_PATH: u64 = 7;
    pub const SDE_PARAMS: u64 = 8;
    pub const REFERENCE: u64 = 9;
    pub const OBSERVATION: u64 = 10;
    pub const DIAGNOSTIC: u64 = 11;
}
