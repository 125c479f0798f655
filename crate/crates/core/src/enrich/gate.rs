//! Difference-based dynamical cooperation between perturbed-text and
//! auxiliary features.
//!
//! `w = sigmoid(W_g^T conv((x_p - x_a)^2) + b_g)` and
//! `f = (x_p + w * x_a) / (1 + w)`, all elementwise except the projection.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EnrichError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Dense `d x d` projection.
    #[default]
    Full,
    /// One weight per coordinate.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub dim: usize,
    pub mode: GateMode,
    /// Odd-width single-channel smoothing kernel.
    pub kernel: Vec<f64>,
    /// Row-major `d x d` (full) or length `d` (diagonal).
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GateParams {
    pub fn new<R: Rng + ?Sized>(dim: usize, mode: GateMode, rng: &mut R) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weights = match mode {
            GateMode::Full => (0..dim * dim).map(|_| normal.sample(rng)).collect(),
            GateMode::Diagonal => (0..dim).map(|_| normal.sample(rng)).collect(),
        };
        Self {
            dim,
            mode,
            kernel: vec![0.25, 0.5, 0.25],
            weights,
            bias: vec![0.0; dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dim: self.dim,
            mode: self.mode,
            kernel: vec![0.0; self.kernel.len()],
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn validate(&self) -> Result<(), EnrichError> {
        if self.kernel.len().is_multiple_of(2) {
            return Err(EnrichError::Gate(format!("kernel width {} is even", self.kernel.len())));
        }
        let expected = match self.mode {
            GateMode::Full => self.dim * self.dim,
            GateMode::Diagonal => self.dim,
        };
        if self.weights.len() != expected || self.bias.len() != self.dim {
            return Err(EnrichError::Gate("weight shape does not match dimension".into()));
        }
        Ok(())
    }

    /// Flat views of `(kernel, weights, bias)` for optimizers.
    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.kernel, &mut self.weights, &mut self.bias]
    }

    pub fn groups(&self) -> [&Vec<f64>; 3] {
        [&self.kernel, &self.weights, &self.bias]
    }
}

/// Intermediates of one gate evaluation, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct GateTrace {
    pub diff_sq: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub w: Vec<f64>,
}

/// Pre-activations are clamped so the weight stays strictly inside (0, 1)
/// in floating point.
const PRE_CLAMP: f64 = 30.0;

fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-PRE_CLAMP, PRE_CLAMP);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Same-length convolution with symmetric zero padding.
fn convolve(input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let n = input.len() as isize;
    (0..n)
        .map(|k| {
            kernel
                .iter()
                .enumerate()
                .map(|(t, &c)| {
                    let idx = k + t as isize - half;
                    if (0..n).contains(&idx) {
                        c * input[idx as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

fn check_dims(x_p: &[f64], x_a: &[f64], gate: &GateParams) -> Result<(), EnrichError> {
    if x_p.len() != gate.dim || x_a.len() != gate.dim {
        return Err(EnrichError::DimensionMismatch {
            expected: gate.dim,
            perturbed: x_p.len(),
            auxiliary: x_a.len(),
        });
    }
    Ok(())
}

pub fn gate_forward(x_p: &[f64], x_a: &[f64], gate: &GateParams) -> Result<GateTrace, EnrichError> {
    check_dims(x_p, x_a, gate)?;
    let d = gate.dim;
    let diff_sq: Vec<f64> = x_p.iter().zip(x_a).map(|(p, a)| (p - a) * (p - a)).collect();
    let smoothed = convolve(&diff_sq, &gate.kernel);
    let mut pre = gate.bias.clone();
    match gate.mode {
        GateMode::Full => {
            for (k, &c) in smoothed.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let row = &gate.weights[k * d..(k + 1) * d];
                for (z, &wkj) in pre.iter_mut().zip(row) {
                    *z += wkj * c;
                }
            }
        }
        GateMode::Diagonal => {
            for ((z, &wk), &c) in pre.iter_mut().zip(&gate.weights).zip(&smoothed) {
                *z += wk * c;
            }
        }
    }
    let w = pre.into_iter().map(sigmoid).collect();
    Ok(GateTrace { diff_sq, smoothed, w })
}

/// Dynamical weights in `(0, 1)^d`.
pub fn gate_weights(x_p: &[f64], x_a: &[f64], gate: &GateParams) -> Result<Vec<f64>, EnrichError> {
    Ok(gate_forward(x_p, x_a, gate)?.w)
}

/// Cooperated feature `(x_p + w x_a) / (1 + w)`.
pub fn cooperate(x_p: &[f64], x_a: &[f64], w: &[f64]) -> Vec<f64> {
    x_p.iter()
        .zip(x_a)
        .zip(w)
        .map(|((p, a), w)| (p + w * a) / (1.0 + w))
        .collect()
}

/// Gradients of [`cooperate`]: returns `(dx_p, dx_a, dw)`.
pub fn cooperate_backward(x_p: &[f64], x_a: &[f64], w: &[f64], df: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = x_p.len();
    let mut dxp = vec![0.0; d];
    let mut dxa = vec![0.0; d];
    let mut dw = vec![0.0; d];
    for k in 0..d {
        let inv = 1.0 / (1.0 + w[k]);
        dxp[k] = df[k] * inv;
        dxa[k] = df[k] * w[k] * inv;
        dw[k] = df[k] * (x_a[k] - x_p[k]) * inv * inv;
    }
    (dxp, dxa, dw)
}

/// Backpropagates `dw` through the gate, accumulating parameter gradients
/// into `grads` and adding input gradients to `dxp`/`dxa`.
#[allow(clippy::too_many_arguments)]
pub fn gate_backward(
    trace: &GateTrace,
    x_p: &[f64],
    x_a: &[f64],
    gate: &GateParams,
    dw: &[f64],
    grads: &mut GateParams,
    dxp: &mut [f64],
    dxa: &mut [f64],
) {
    let d = gate.dim;
    let dz: Vec<f64> = dw.iter().zip(&trace.w).map(|(g, w)| g * w * (1.0 - w)).collect();
    for (gb, z) in grads.bias.iter_mut().zip(&dz) {
        *gb += z;
    }
    let mut dsmooth = vec![0.0; d];
    match gate.mode {
        GateMode::Full => {
            for k in 0..d {
                let row = &gate.weights[k * d..(k + 1) * d];
                let grow = &mut grads.weights[k * d..(k + 1) * d];
                let c = trace.smoothed[k];
                let mut acc = 0.0;
                for j in 0..d {
                    grow[j] += c * dz[j];
                    acc += row[j] * dz[j];
                }
                dsmooth[k] = acc;
            }
        }
        GateMode::Diagonal => {
            for k in 0..d {
                grads.weights[k] += trace.smoothed[k] * dz[k];
                dsmooth[k] = gate.weights[k] * dz[k];
            }
        }
    }
    let half = (gate.kernel.len() / 2) as isize;
    let n = d as isize;
    let mut ddiff = vec![0.0; d];
    for k in 0..n {
        for (t, &c) in gate.kernel.iter().enumerate() {
            let idx = k + t as isize - half;
            if (0..n).contains(&idx) {
                grads.kernel[t] += dsmooth[k as usize] * trace.diff_sq[idx as usize];
                ddiff[idx as usize] += dsmooth[k as usize] * c;
            }
        }
    }
    for k in 0..d {
        let g = ddiff[k] * 2.0 * (x_p[k] - x_a[k]);
        dxp[k] += g;
        dxa[k] -= g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_gate(d: usize) -> GateParams {
        let mut weights = vec![0.0; d * d];
        for k in 0..d {
            weights[k * d + k] = 1.0;
        }
        GateParams {
            dim: d,
            mode: GateMode::Full,
            kernel: vec![0.0, 1.0, 0.0],
            weights,
            bias: vec![0.0; d],
        }
    }

    #[test]
    fn equal_inputs_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gate = GateParams::new(5, GateMode::Full, &mut rng);
        let x = [0.3, -1.0, 2.0, 0.0, 0.5];
        assert_eq!(gate_weights(&x, &x, &gate).unwrap(), vec![0.5; 5]);
    }

    #[test]
    fn hand_computed_three_dim_case() {
        let gate = identity_gate(3);
        let w = gate_weights(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], &gate).unwrap();
        let expect = [1.0, 4.0, 9.0].map(|z: f64| 1.0 / (1.0 + (-z).exp()));
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothing_kernel_with_padding() {
        assert_eq!(convolve(&[1.0, 4.0, 9.0], &[1.0, 1.0, 1.0]), vec![5.0, 14.0, 13.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let gate = identity_gate(3);
        assert!(matches!(
            gate_weights(&[1.0, 2.0], &[0.0, 0.0, 0.0], &gate),
            Err(EnrichError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cooperate_examples() {
        let f = cooperate(&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]);
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-15 && (f[1] - 1.0 / 3.0).abs() < 1e-15);
        let x = [0.2, -3.0, 7.5];
        let same = cooperate(&x, &x, &[0.1, 0.9, 0.4]);
        for (a, b) in same.iter().zip(x) {
            assert!((a - b).abs() < 1e-14);
        }
        let near_zero = cooperate(&[1.0, 2.0], &[5.0, -5.0], &[1e-12, 1e-12]);
        assert!((near_zero[0] - 1.0).abs() < 1e-10 && (near_zero[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn even_kernel_rejected() {
        let mut gate = identity_gate(3);
        gate.kernel = vec![0.5, 0.5];
        assert!(gate.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn weights_in_open_unit_interval(
            xp in proptest::collection::vec(-3.0f64..3.0, 6),
            xa in proptest::collection::vec(-3.0f64..3.0, 6),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gate = GateParams::new(6, GateMode::Full, &mut rng);
            for w in gate_weights(&xp, &xa, &gate).unwrap() {
                proptest::prop_assert!(w > 0.0 && w < 1.0);
            }
        }

        #[test]
        fn cooperate_is_between_inputs(
            xp in proptest::collection::vec(-5.0f64..5.0, 8),
            xa in proptest::collection::vec(-5.0f64..5.0, 8),
            w in proptest::collection::vec(0.001f64..0.999, 8),
        ) {
            let f = cooperate(&xp, &xa, &w);
            for k in 0..8 {
                let lo = xp[k].min(xa[k]) - 1e-12;
                let hi = xp[k].max(xa[k]) + 1e-12;
                proptest::prop_assert!(f[k] >= lo && f[k] <= hi);
            }
        }
    }

    /// Central differences of a scalar loss `sum(c * f)` through gate and
    /// cooperation, for every gate parameter and both inputs.
    #[test]
    fn gate_gradients_match_finite_differences() {
        for mode in [GateMode::Full, GateMode::Diagonal] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let d = 5;
            let mut gate = GateParams::new(d, mode, &mut rng);
            gate.kernel = vec![0.3, 0.9, -0.4];
            gate.bias = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let xp: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xa: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let coef: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |g: &GateParams, xp: &[f64], xa: &[f64]| {
                let w = gate_weights(xp, xa, g).unwrap();
                cooperate(xp, xa, &w).iter().zip(&coef).map(|(f, c)| f * c).sum::<f64>()
            };

            let trace = gate_forward(&xp, &xa, &gate).unwrap();
            let (mut dxp, mut dxa, dw) = cooperate_backward(&xp, &xa, &trace.w, &coef);
            let mut grads = gate.zeros_like();
            gate_backward(&trace, &xp, &xa, &gate, &dw, &mut grads, &mut dxp, &mut dxa);

            let eps = 1e-5;
            let check = |analytic: f64, numeric: f64| {
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!((analytic - numeric).abs() / denom < 1e-4, "{analytic} vs {numeric}");
            };
            for group in 0..3 {
                for i in 0..gate.groups()[group].len() {
                    let mut plus = gate.clone();
                    plus.groups_mut()[group][i] += eps;
                    let mut minus = gate.clone();
                    minus.groups_mut()[group][i] -= eps;
                    let numeric = (loss(&plus, &xp, &xa) - loss(&minus, &xp, &xa)) / (2.0 * eps);
                    check(grads.groups()[group][i], numeric);
                }
            }
            for i in 0..d {
                let mut p = xp.clone();
                p[i] += eps;
                let mut m = xp.clone();
                m[i] -= eps;
                check(dxp[i], (loss(&gate, &p, &xa) - loss(&gate, &m, &xa)) / (2.0 * eps));
                let mut p = xa.clone();
                p[i] += eps;
                let mut m = xa.clone();
                m[i] -= eps;
                check(dxa[i], (loss(&gate, &xp, &p) - loss(&gate, &xp, &m)) / (2.0 * eps));
            }
        }
    }
}
