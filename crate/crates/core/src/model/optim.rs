//! AdamW with lazy updates for the embedding table.

use serde::{Deserialize, Serialize};

use super::params::{DetectorParams, Gradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Adaptive moments for every parameter group.
///
/// Embedding rows absent from a step's gradient are left untouched,
/// including their weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    embedding: Moments,
    head: Vec<Moments>,
    gate: Vec<Moments>,
}

struct Update {
    lr: f64,
    beta1: f64,
    beta2: f64,
    c1: f64,
    c2: f64,
    eps: f64,
    decay: f64,
}

impl Update {
    #[inline]
    fn apply(&self, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
        for i in 0..p.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = m[i] / self.c1;
            let vhat = v[i] / self.c2;
            p[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.decay * p[i]);
        }
    }
}

impl AdamW {
    pub fn new(params: &DetectorParams, config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            embedding: Moments::new(params.embedding.len()),
            head: params.head.groups().iter().map(|g| Moments::new(g.len())).collect(),
            gate: params.gate.groups().iter().map(|g| Moments::new(g.len())).collect(),
        }
    }

    pub fn apply(&mut self, params: &mut DetectorParams, grads: &Gradients) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let up = Update {
            lr: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            c1: 1.0 - c.beta1.powi(t),
            c2: 1.0 - c.beta2.powi(t),
            eps: c.eps,
            decay: c.weight_decay,
        };
        let dim = params.config.dim();
        for (bucket, g) in grads.embedding.iter() {
            let r = bucket as usize * dim..(bucket as usize + 1) * dim;
            up.apply(
                &mut params.embedding[r.clone()],
                g,
                &mut self.embedding.m[r.clone()],
                &mut self.embedding.v[r],
            );
        }
        for ((p, g), mo) in params.head.groups_mut().into_iter().zip(grads.head.groups()).zip(&mut self.head) {
            up.apply(p, g, &mut mo.m, &mut mo.v);
        }
        if grads.gate_used {
            for ((p, g), mo) in params.gate.groups_mut().into_iter().zip(grads.gate.groups()).zip(&mut self.gate) {
                up.apply(p, g, &mut mo.m, &mut mo.v);
            }
        }
    }

    /// Named moment arrays for checkpointing.
    pub fn arrays(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("adam.embedding.m".into(), &self.embedding.m),
            ("adam.embedding.v".into(), &self.embedding.v),
        ];
        for (i, mo) in self.head.iter().enumerate() {
            out.push((format!("adam.head.{i}.m"), &mo.m));
            out.push((format!("adam.head.{i}.v"), &mo.v));
        }
        for (i, mo) in self.gate.iter().enumerate() {
            out.push((format!("adam.gate.{i}.m"), &mo.m));
            out.push((format!("adam.gate.{i}.v"), &mo.v));
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = vec![
            ("adam.embedding.m".into(), &mut self.embedding.m),
            ("adam.embedding.v".into(), &mut self.embedding.v),
        ];
        for (i, mo) in self.head.iter_mut().enumerate() {
            out.push((format!("adam.head.{i}.m"), &mut mo.m));
            out.push((format!("adam.head.{i}.v"), &mut mo.v));
        }
        for (i, mo) in self.gate.iter_mut().enumerate() {
            out.push((format!("adam.gate.{i}.m"), &mut mo.m));
            out.push((format!("adam.gate.{i}.v"), &mut mo.v));
        }
        out
    }
}
