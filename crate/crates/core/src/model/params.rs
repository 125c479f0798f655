//! Detector parameters and their gradients.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, HashedEncoder};
use super::head::Head;
use crate::enrich::{GateMode, GateParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub gate_mode: GateMode,
    /// Standard deviation of the initial embedding entries.
    pub embed_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            hidden: 32,
            gate_mode: GateMode::Full,
            embed_init: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        self.encoder.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub config: ModelConfig,
    /// Row-major `buckets x dim`.
    pub embedding: Vec<f64>,
    pub head: Head,
    pub gate: GateParams,
}

impl DetectorParams {
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim();
        let normal = Normal::new(0.0, config.embed_init).expect("finite std");
        let embedding = (0..config.encoder.buckets * d).map(|_| normal.sample(&mut rng)).collect();
        let head = Head::init(d, config.hidden, &mut rng);
        let gate = GateParams::new(d, config.gate_mode, &mut rng);
        Self {
            config,
            embedding,
            head,
            gate,
        }
    }

    pub fn encoder(&self) -> HashedEncoder<'_> {
        HashedEncoder {
            config: &self.config.encoder,
            table: &self.embedding,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.embedding.iter().all(|v| v.is_finite())
            && self.head.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
            && self.gate.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Gradient rows for the touched embedding buckets only.
#[derive(Debug, Clone, Default)]
pub struct SparseRows {
    dim: usize,
    index: HashMap<u32, usize>,
    ids: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn row_mut(&mut self, bucket: u32) -> &mut [f64] {
        let dim = self.dim;
        let slot = *self.index.entry(bucket).or_insert_with(|| {
            self.ids.push(bucket);
            self.values.extend(std::iter::repeat_n(0.0, dim));
            self.ids.len() - 1
        });
        &mut self.values[slot * dim..(slot + 1) * dim]
    }

    pub fn get(&self, bucket: u32) -> Option<&[f64]> {
        self.index
            .get(&bucket)
            .map(|&slot| &self.values[slot * self.dim..(slot + 1) * self.dim])
    }

    /// Touched rows in first-touch order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(slot, &b)| (b, &self.values[slot * self.dim..(slot + 1) * self.dim]))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn clear(&mut self) {
        self.index.clear();
        self.ids.clear();
        self.values.clear();
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: SparseRows,
    pub head: Head,
    pub gate: GateParams,
    /// Whether any gradient reached the gate.
    pub gate_used: bool,
}

impl Gradients {
    pub fn zeros_like(params: &DetectorParams) -> Self {
        Self {
            embedding: SparseRows::new(params.config.dim()),
            head: Head::zeros(params.head.dim, params.head.hidden),
            gate: params.gate.zeros_like(),
            gate_used: false,
        }
    }

    pub fn clear(&mut self) {
        self.embedding.clear();
        for g in self.head.groups_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for g in self.gate.groups_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        self.gate_used = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_rows_accumulate() {
        let mut s = SparseRows::new(3);
        s.row_mut(7)[1] += 2.0;
        s.row_mut(2)[0] += 1.0;
        s.row_mut(7)[1] += 0.5;
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(7).unwrap(), &[0.0, 2.5, 0.0]);
        assert_eq!(s.iter().map(|(b, _)| b).collect::<Vec<_>>(), vec![7, 2]);
        s.clear();
        assert!(s.is_empty() && s.get(7).is_none());
    }

    #[test]
    fn init_is_seeded() {
        let config = ModelConfig {
            encoder: EncoderConfig { buckets: 64, dim: 4, ..Default::default() },
            hidden: 3,
            ..Default::default()
        };
        assert_eq!(DetectorParams::init(config, 1), DetectorParams::init(config, 1));
        assert_ne!(DetectorParams::init(config, 1), DetectorParams::init(config, 2));
    }
}
