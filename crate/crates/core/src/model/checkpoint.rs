//! Binary checkpoint container.
//!
//! Layout: magic `CGCK`, `u32` version, `u64` header length, a JSON header
//! naming every array and its length, then the arrays as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::Head;
use super::params::{DetectorParams, ModelConfig};
use super::ModelError;
use crate::replay::MemoryBuffer;

pub const MAGIC: &[u8; 4] = b"CGCK";
pub const VERSION: u32 = 1;

/// Position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, decimal (`u128` does not fit JSON numbers).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, ModelError> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| ModelError::Checkpoint(format!("bad rng word position `{}`", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    arrays: Vec<ArrayInfo>,
    rng: Option<RngState>,
    memory: Option<MemoryBuffer>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DetectorParams,
    pub memory: Option<MemoryBuffer>,
    pub rng: Option<RngState>,
    /// Free-form run information, such as the resolved configuration.
    pub meta: serde_json::Value,
}

fn named(params: &DetectorParams) -> Vec<(&'static str, &[f64])> {
    vec![
        ("embedding", &params.embedding),
        ("head.w1", &params.head.w1),
        ("head.b1", &params.head.b1),
        ("head.w2", &params.head.w2),
        ("head.b2", &params.head.b2),
        ("gate.kernel", &params.gate.kernel),
        ("gate.weights", &params.gate.weights),
        ("gate.bias", &params.gate.bias),
    ]
}

impl Checkpoint {
    pub fn new(params: DetectorParams) -> Self {
        Self {
            params,
            memory: None,
            rng: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arrays = named(&self.params);
        let header = Header {
            version: VERSION,
            model: self.params.config,
            arrays: arrays
                .iter()
                .map(|(n, a)| ArrayInfo {
                    name: n.to_string(),
                    len: a.len(),
                })
                .collect(),
            rng: self.rng.clone(),
            memory: self.memory.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("serializable header");
        let total: usize = arrays.iter().map(|(_, a)| a.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + total * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, a) in arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let mut cursor = bytes;
        let mut magic = [0u8; 4];
        cursor.read_exact(&mut magic).map_err(|_| bad("truncated magic".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        cursor.read_exact(&mut word).map_err(|_| bad("truncated version".into()))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        cursor.read_exact(&mut len).map_err(|_| bad("truncated header length".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if cursor.len() < len {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&cursor[..len]).map_err(|e| bad(format!("header: {e}")))?;
        cursor = &cursor[len..];

        let c = header.model;
        let d = c.dim();
        let mut params = DetectorParams {
            config: c,
            embedding: Vec::new(),
            head: Head::zeros(d, c.hidden),
            gate: crate::enrich::GateParams {
                dim: d,
                mode: c.gate_mode,
                kernel: Vec::new(),
                weights: Vec::new(),
                bias: Vec::new(),
            },
        };
        for info in &header.arrays {
            let need = info.len * 8;
            if cursor.len() < need {
                return Err(bad(format!("array {} truncated", info.name)));
            }
            let values: Vec<f64> = cursor[..need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            cursor = &cursor[need..];
            let slot = match info.name.as_str() {
                "embedding" => &mut params.embedding,
                "head.w1" => &mut params.head.w1,
                "head.b1" => &mut params.head.b1,
                "head.w2" => &mut params.head.w2,
                "head.b2" => &mut params.head.b2,
                "gate.kernel" => &mut params.gate.kernel,
                "gate.weights" => &mut params.gate.weights,
                "gate.bias" => &mut params.gate.bias,
                other => return Err(bad(format!("unknown array {other}"))),
            };
            *slot = values;
        }
        if !cursor.is_empty() {
            return Err(bad(format!("{} trailing bytes", cursor.len())));
        }
        let expected = [
            ("embedding", c.encoder.buckets * d, params.embedding.len()),
            ("head.w1", d * c.hidden, params.head.w1.len()),
            ("head.b1", c.hidden, params.head.b1.len()),
            ("head.w2", c.hidden * 2, params.head.w2.len()),
            ("head.b2", 2, params.head.b2.len()),
        ];
        for (name, want, got) in expected {
            if want != got {
                return Err(bad(format!("array {name} has {got} values, expected {want}")));
            }
        }
        params
            .gate
            .validate()
            .map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            params,
            memory: header.memory,
            rng: header.rng,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io = |e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut file = fs::File::create(path).map_err(io)?;
        file.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;
    use rand::{Rng, SeedableRng};

    fn params() -> DetectorParams {
        DetectorParams::init(
            ModelConfig {
                encoder: EncoderConfig { buckets: 32, dim: 4, ..Default::default() },
                hidden: 3,
                ..Default::default()
            },
            5,
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let _: u64 = rng.gen();
        let mut ck = Checkpoint::new(params());
        ck.rng = Some(RngState::capture(&rng));
        ck.meta = serde_json::json!({ "seed": 77 });
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut restored = back.rng.unwrap().restore().unwrap();
        assert_eq!(restored.gen::<u64>(), rng.gen::<u64>());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(params());
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = Checkpoint::new(params()).to_bytes();
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong_version), Err(ModelError::Checkpoint(_))));
    }
}
