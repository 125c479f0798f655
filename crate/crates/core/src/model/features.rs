//! Per-sample feature computation with the tape needed for backpropagation.

use serde::{Deserialize, Serialize};

use super::encoder::{embed, ngram_buckets, EncoderConfig};
use super::params::{DetectorParams, Gradients};
use crate::corpus::LabeledText;
use crate::enrich::{cooperate, cooperate_backward, gate_backward, gate_forward, GateTrace};

/// How perturbed-text and auxiliary features are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Perturbed-text feature only.
    Plain,
    /// Fixed equal weights, `(x_p + x_a) / 2`.
    Average,
    /// Learned cooperation gate.
    Gated,
}

/// A sample reduced to its n-gram buckets; independent of parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prepared {
    pub id: String,
    pub label: u8,
    pub text: Vec<u32>,
    /// Buckets of the auxiliary text; `None` reuses the perturbed text.
    pub aux: Option<Vec<u32>>,
}

impl Prepared {
    /// Encodes the text and the WHAT section of any auxiliary information.
    pub fn new(sample: &LabeledText, config: &EncoderConfig) -> Self {
        Self {
            id: sample.id.clone(),
            label: sample.label,
            text: ngram_buckets(&sample.text, config),
            aux: sample.aux.as_ref().map(|a| ngram_buckets(&a.what, config)),
        }
    }

    pub fn batch(samples: &[&LabeledText], config: &EncoderConfig) -> Vec<Self> {
        samples.iter().map(|s| Self::new(s, config)).collect()
    }

    fn aux_buckets(&self) -> &[u32] {
        self.aux.as_deref().unwrap_or(&self.text)
    }
}

#[derive(Debug, Clone)]
pub struct FeatureTape {
    pub x_p: Vec<f64>,
    pub x_a: Option<Vec<f64>>,
    pub gate: Option<GateTrace>,
    /// The feature consumed by the head.
    pub f: Vec<f64>,
}

pub fn forward_feature(params: &DetectorParams, sample: &Prepared, fusion: Fusion) -> FeatureTape {
    let d = params.config.dim();
    let x_p = embed(&sample.text, &params.embedding, d);
    match fusion {
        Fusion::Plain => FeatureTape {
            f: x_p.clone(),
            x_p,
            x_a: None,
            gate: None,
        },
        Fusion::Average => {
            let x_a = embed(sample.aux_buckets(), &params.embedding, d);
            let f = cooperate(&x_p, &x_a, &vec![1.0; d]);
            FeatureTape {
                x_p,
                x_a: Some(x_a),
                gate: None,
                f,
            }
        }
        Fusion::Gated => {
            let x_a = embed(sample.aux_buckets(), &params.embedding, d);
            let trace = gate_forward(&x_p, &x_a, &params.gate).expect("gate matches encoder dimension");
            let f = cooperate(&x_p, &x_a, &trace.w);
            FeatureTape {
                x_p,
                x_a: Some(x_a),
                gate: Some(trace),
                f,
            }
        }
    }
}

/// Feature consumed by the head for `sample`.
pub fn feature(params: &DetectorParams, sample: &Prepared, fusion: Fusion) -> Vec<f64> {
    forward_feature(params, sample, fusion).f
}

fn scatter(grads: &mut Gradients, buckets: &[u32], dx: &[f64]) {
    if buckets.is_empty() {
        return;
    }
    let inv = 1.0 / buckets.len() as f64;
    let scaled: Vec<f64> = dx.iter().map(|v| v * inv).collect();
    for &b in buckets {
        for (g, s) in grads.embedding.row_mut(b).iter_mut().zip(&scaled) {
            *g += s;
        }
    }
}

/// Backpropagates `df` (gradient w.r.t. the fused feature) into the
/// embedding rows and, when gated, the gate parameters.
pub fn backward_feature(
    params: &DetectorParams,
    sample: &Prepared,
    tape: &FeatureTape,
    fusion: Fusion,
    df: &[f64],
    grads: &mut Gradients,
) {
    match fusion {
        Fusion::Plain => scatter(grads, &sample.text, df),
        Fusion::Average => {
            let half: Vec<f64> = df.iter().map(|v| 0.5 * v).collect();
            scatter(grads, &sample.text, &half);
            scatter(grads, sample.aux_buckets(), &half);
        }
        Fusion::Gated => {
            let x_a = tape.x_a.as_ref().expect("gated tape has auxiliary feature");
            let trace = tape.gate.as_ref().expect("gated tape has gate trace");
            let (mut dxp, mut dxa, dw) = cooperate_backward(&tape.x_p, x_a, &trace.w, df);
            gate_backward(trace, &tape.x_p, x_a, &params.gate, &dw, &mut grads.gate, &mut dxp, &mut dxa);
            grads.gate_used = true;
            scatter(grads, &sample.text, &dxp);
            scatter(grads, sample.aux_buckets(), &dxa);
        }
    }
}
