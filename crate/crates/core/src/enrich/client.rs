//! Auxiliary-information client with a per-sample cache and stub fallback.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{build_prompt, parse_sections, AuxiliaryInfo, EnrichError, Provider, StubDeobfuscator};
use crate::corpus::LabeledText;
use crate::perturb::Lexicons;

/// A chat-completion endpoint taking one user prompt.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, EnrichError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnricherConfig {
    /// Attempts after the first failure before falling back to the stub.
    pub max_retries: usize,
    /// Concurrent in-flight requests in [`Enricher::enrich_all`].
    pub parallelism: usize,
}

impl Default for EnricherConfig {
    fn default() -> Self {
        Self {
            max_retries: 2,
            parallelism: 4,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    id: String,
    aux: AuxiliaryInfo,
}

pub struct Enricher {
    backend: Option<Box<dyn ChatBackend>>,
    stub: StubDeobfuscator,
    config: EnricherConfig,
    cache: Mutex<HashMap<String, AuxiliaryInfo>>,
}

impl Enricher {
    /// Offline mode: every answer comes from the deobfuscation stub.
    pub fn stub(lexicons: &Lexicons) -> Self {
        Self {
            backend: None,
            stub: StubDeobfuscator::new(lexicons),
            config: EnricherConfig::default(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_backend(lexicons: &Lexicons, backend: Box<dyn ChatBackend>, config: EnricherConfig) -> Self {
        Self {
            backend: Some(backend),
            stub: StubDeobfuscator::new(lexicons),
            config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Live backend when the endpoint variables are set and the `http`
    /// feature is enabled, stub otherwise.
    pub fn from_env(lexicons: &Lexicons, config: EnricherConfig) -> Self {
        #[cfg(feature = "http")]
        if let Some(backend) = super::HttpChatBackend::from_env() {
            return Self::with_backend(lexicons, Box::new(backend), config);
        }
        let mut enricher = Self::stub(lexicons);
        enricher.config = config;
        enricher
    }

    pub fn is_live(&self) -> bool {
        self.backend.is_some()
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Auxiliary information for sample `id`, served from cache when present.
    pub fn fetch_auxiliary(&self, id: &str, text: &str) -> AuxiliaryInfo {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(id) {
            return hit.clone();
        }
        let info = self.query(text);
        self.cache
            .lock()
            .expect("cache lock")
            .entry(id.to_string())
            .or_insert(info)
            .clone()
    }

    fn query(&self, text: &str) -> AuxiliaryInfo {
        let Some(backend) = &self.backend else {
            return self.stub.enrich(text);
        };
        let prompt = build_prompt(text);
        for attempt in 0..=self.config.max_retries {
            log::debug!("llm request (attempt {attempt}): {prompt}");
            match backend.complete(&prompt).and_then(|r| parse_sections(&r).map(|s| (r, s))) {
                Ok((raw, (how, why, what))) => {
                    log::debug!("llm response: {raw}");
                    return AuxiliaryInfo {
                        how,
                        why,
                        what,
                        provider: Provider::Llm,
                        raw_response: raw,
                    };
                }
                Err(e) => log::warn!("llm attempt {attempt} failed: {e}"),
            }
        }
        log::warn!("llm unavailable after {} attempts; using stub", self.config.max_retries + 1);
        self.stub.enrich(text)
    }

    /// Fills `aux` on every sample, with bounded parallelism.
    pub fn enrich_all(&self, samples: &mut [LabeledText]) {
        let workers = self.config.parallelism.max(1).min(samples.len().max(1));
        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<AuxiliaryInfo>>> = samples.iter().map(|_| Mutex::new(None)).collect();
        let view: &[LabeledText] = samples;
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(s) = view.get(i) else { break };
                    let info = self.fetch_auxiliary(&s.id, &s.text);
                    *results[i].lock().expect("result lock") = Some(info);
                });
            }
        });
        for (s, r) in samples.iter_mut().zip(results) {
            s.aux = r.into_inner().expect("result lock");
        }
    }

    /// Merges a JSON Lines cache file; returns the number of entries read.
    pub fn load_cache(&self, path: &Path) -> Result<usize, EnrichError> {
        let err = |message: String| EnrichError::Cache {
            path: path.display().to_string(),
            message,
        };
        let file = fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let mut cache = self.cache.lock().expect("cache lock");
        let mut n = 0;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheLine = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            cache.insert(entry.id, entry.aux);
            n += 1;
        }
        Ok(n)
    }

    /// Writes the cache as JSON Lines sorted by id.
    pub fn save_cache(&self, path: &Path) -> Result<(), EnrichError> {
        let err = |e: std::io::Error| EnrichError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let cache = self.cache.lock().expect("cache lock");
        let mut ids: Vec<&String> = cache.keys().collect();
        ids.sort();
        let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(err)?);
        for id in ids {
            let line = serde_json::to_string(&CacheLine {
                id: id.clone(),
                aux: cache[id].clone(),
            })
            .expect("serializable cache entry");
            writeln!(out, "{line}").map_err(err)?;
        }
        out.flush().map_err(err)
    }
}

/// OpenAI-compatible chat-completion client.
#[cfg(feature = "http")]
#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
}

#[cfg(feature = "http")]
impl HttpChatBackend {
    pub const ENV_URL: &'static str = "CONTIGUARD_LLM_URL";
    pub const ENV_KEY: &'static str = "CONTIGUARD_LLM_API_KEY";
    pub const ENV_MODEL: &'static str = "CONTIGUARD_LLM_MODEL";

    pub fn from_env() -> Option<Self> {
        Some(Self {
            endpoint: std::env::var(Self::ENV_URL).ok()?,
            api_key: std::env::var(Self::ENV_KEY).unwrap_or_default(),
            model: std::env::var(Self::ENV_MODEL).unwrap_or_else(|_| "gpt-4o-mini".to_string()),
        })
    }
}

#[cfg(feature = "http")]
impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str) -> Result<String, EnrichError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let mut resp = ureq::post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| EnrichError::Backend(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| EnrichError::Backend(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| EnrichError::Backend(format!("unexpected response: {value}")))
    }
}
