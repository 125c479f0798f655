//! Hashed character n-gram encoder.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::util::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub buckets: usize,
    pub min_n: usize,
    pub max_n: usize,
    /// Characters of normalized text kept before n-gram extraction.
    pub max_chars: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            buckets: 1 << 16,
            min_n: 3,
            max_n: 5,
            max_chars: 360,
        }
    }
}

/// NFC, lowercase, truncated to `max_chars` characters.
pub fn normalize(text: &str, max_chars: usize) -> String {
    text.nfc().flat_map(char::to_lowercase).take(max_chars).collect()
}

/// Bucket ids of every character n-gram of the space-padded normalized
/// text, in text order with repeats. Empty for blank text.
pub fn ngram_buckets(text: &str, config: &EncoderConfig) -> Vec<u32> {
    let norm = normalize(text, config.max_chars);
    if norm.trim().is_empty() {
        return Vec::new();
    }
    let padded: Vec<char> = std::iter::once(' ').chain(norm.chars()).chain(std::iter::once(' ')).collect();
    let mut out = Vec::new();
    let mut buf = String::new();
    for n in config.min_n..=config.max_n {
        for window in padded.windows(n) {
            buf.clear();
            buf.extend(window);
            out.push((fnv1a64(buf.as_bytes()) % config.buckets as u64) as u32);
        }
    }
    out
}

/// Mean of the embedding rows named by `buckets`; zero for no buckets.
pub fn embed(buckets: &[u32], table: &[f64], dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    if buckets.is_empty() {
        return x;
    }
    for &b in buckets {
        let row = &table[b as usize * dim..(b as usize + 1) * dim];
        for (xi, r) in x.iter_mut().zip(row) {
            *xi += r;
        }
    }
    let inv = 1.0 / buckets.len() as f64;
    x.iter_mut().for_each(|v| *v *= inv);
    x
}

/// Text to feature vector.
pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<f64>;
}

/// Borrowed view pairing an encoder configuration with its table.
pub struct HashedEncoder<'a> {
    pub config: &'a EncoderConfig,
    pub table: &'a [f64],
}

impl TextEncoder for HashedEncoder<'_> {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        embed(&ngram_buckets(text, self.config), self.table, self.config.dim)
    }
}
