//! Two-layer classification head: `logits = W2^T tanh(W1^T f + b1) + b2`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub dim: usize,
    pub hidden: usize,
    /// Row-major `dim x hidden`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `hidden x 2`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: [f64; NUM_CLASSES],
}

impl Head {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            w1: vec![0.0; dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * NUM_CLASSES],
            b2: vec![0.0; NUM_CLASSES],
        }
    }

    /// Glorot-scaled normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut head = Self::zeros(dim, hidden);
        let n1 = Normal::new(0.0, (2.0 / (dim + hidden) as f64).sqrt()).expect("finite std");
        let n2 = Normal::new(0.0, (2.0 / (hidden + NUM_CLASSES) as f64).sqrt()).expect("finite std");
        head.w1.iter_mut().for_each(|w| *w = n1.sample(rng));
        head.w2.iter_mut().for_each(|w| *w = n2.sample(rng));
        head
    }

    pub fn groups(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Hidden pre-activation `W1^T f + b1`.
    pub fn pre_activation(&self, f: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let mut pre = self.b1.clone();
        for (k, &x) in f.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.w1[k * h..(k + 1) * h];
            for (p, &w) in pre.iter_mut().zip(row) {
                *p += w * x;
            }
        }
        pre
    }

    pub fn forward(&self, f: &[f64]) -> HeadTrace {
        let pre = self.pre_activation(f);
        let hidden: Vec<f64> = pre.iter().map(|z| z.tanh()).collect();
        let mut logits = [self.b2[0], self.b2[1]];
        for (j, &a) in hidden.iter().enumerate() {
            logits[0] += self.w2[j * NUM_CLASSES] * a;
            logits[1] += self.w2[j * NUM_CLASSES + 1] * a;
        }
        HeadTrace { pre, hidden, logits }
    }

    pub fn logits(&self, f: &[f64]) -> [f64; NUM_CLASSES] {
        self.forward(f).logits
    }

    pub fn probabilities(&self, f: &[f64]) -> [f64; NUM_CLASSES] {
        softmax(self.logits(f))
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/df`.
    pub fn backward(&self, trace: &HeadTrace, f: &[f64], dlogits: [f64; NUM_CLASSES], grads: &mut Head) -> Vec<f64> {
        let h = self.hidden;
        grads.b2[0] += dlogits[0];
        grads.b2[1] += dlogits[1];
        let mut dpre = vec![0.0; h];
        for j in 0..h {
            let a = trace.hidden[j];
            grads.w2[j * NUM_CLASSES] += a * dlogits[0];
            grads.w2[j * NUM_CLASSES + 1] += a * dlogits[1];
            let da = self.w2[j * NUM_CLASSES] * dlogits[0] + self.w2[j * NUM_CLASSES + 1] * dlogits[1];
            dpre[j] = da * (1.0 - a * a);
        }
        for (g, d) in grads.b1.iter_mut().zip(&dpre) {
            *g += d;
        }
        let mut df = vec![0.0; self.dim];
        for (k, &x) in f.iter().enumerate() {
            let row = &self.w1[k * h..(k + 1) * h];
            let grow = &mut grads.w1[k * h..(k + 1) * h];
            let mut acc = 0.0;
            for j in 0..h {
                grow[j] += x * dpre[j];
                acc += row[j] * dpre[j];
            }
            df[k] = acc;
        }
        df
    }

    /// `dF_y/df` for the class score (logit) `y`.
    pub fn logit_gradient(&self, f: &[f64], y: usize) -> Vec<f64> {
        let pre = self.pre_activation(f);
        let s: Vec<f64> = pre.iter().map(|z| 1.0 - z.tanh().powi(2)).collect();
        self.project_back(&s, y)
    }

    /// `W1 (s ⊙ W2[:, y])`.
    pub(crate) fn project_back(&self, s: &[f64], y: usize) -> Vec<f64> {
        let h = self.hidden;
        let v: Vec<f64> = (0..h).map(|j| s[j] * self.w2[j * NUM_CLASSES + y]).collect();
        (0..self.dim)
            .map(|k| self.w1[k * h..(k + 1) * h].iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn softmax(logits: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

/// `-sum_c target_c log p_c` and its gradient with respect to the logits.
pub fn cross_entropy(logits: [f64; NUM_CLASSES], target: [f64; NUM_CLASSES]) -> (f64, [f64; NUM_CLASSES]) {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    let p = softmax(logits);
    let loss = target[0] * (lse - logits[0]) + target[1] * (lse - logits[1]);
    let t = target[0] + target[1];
    (loss, [t * p[0] - target[0], t * p[1] - target[1]])
}

pub fn one_hot(label: u8) -> [f64; NUM_CLASSES] {
    if label == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

pub const UNIFORM: [f64; NUM_CLASSES] = [0.5, 0.5];
