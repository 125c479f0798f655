//! Compact differentiable toxicity detector: hashed n-gram encoder, tanh
//! head, sparse AdamW and the training loop.

pub mod checkpoint;
mod encoder;
mod features;
pub mod head;
mod optim;
mod params;
pub mod train;

use thiserror::Error;

pub use checkpoint::{Checkpoint, RngState};
pub use encoder::{embed, ngram_buckets, normalize, EncoderConfig, HashedEncoder, TextEncoder};
pub use features::{backward_feature, feature, forward_feature, FeatureTape, Fusion, Prepared};
pub use head::Head;
pub use optim::{AdamW, AdamWConfig};
pub use params::{DetectorParams, Gradients, ModelConfig, SparseRows};
pub use train::{
    classification_step, classify, evaluate, fit, predict, train_step, Ablation, ActiveTerms, Components, FitReport,
    TrainConfig,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss term `{term}` became {value} at step {step}")]
    NonFinite { term: &'static str, value: f64, step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A trained detector labelling raw text with its plain text feature.
pub struct TextDetector<'a> {
    pub params: &'a DetectorParams,
}

impl crate::corpus::Classify for TextDetector<'_> {
    fn predict(&self, text: &str) -> u8 {
        let f = self.params.encoder().encode(text);
        let l = self.params.head.logits(&f);
        u8::from(l[1] > l[0])
    }
}
