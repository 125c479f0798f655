use std::collections::BTreeSet;

use thiserror::Error;

use crate::perturb::lookup_form;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer request failed: {0}")]
    Request(String),
    #[error("unexpected scorer response: {0}")]
    Response(String),
}

/// A toxicity score source returning values in `[0, 1]`.
pub trait ToxicityScorer: Send + Sync {
    fn score(&self, text: &str) -> Result<f64, ScorerError>;
}

/// Offline scorer: fraction of tokens found in a toxic lexicon.
#[derive(Debug, Clone, Default)]
pub struct LexiconScorer {
    words: BTreeSet<String>,
}

impl LexiconScorer {
    pub fn new(words: BTreeSet<String>) -> Self {
        Self { words }
    }
}

impl ToxicityScorer for LexiconScorer {
    fn score(&self, text: &str) -> Result<f64, ScorerError> {
        let mut total = 0usize;
        let mut hits = 0usize;
        for token in text.split_whitespace() {
            total += 1;
            if self.words.contains(&lookup_form(token)) {
                hits += 1;
            }
        }
        if total == 0 {
            return Ok(0.0);
        }
        Ok((hits as f64 / total as f64).clamp(0.0, 1.0))
    }
}

/// Client for a Perspective-style `comments:analyze` endpoint.
#[cfg(feature = "http")]
#[derive(Debug, Clone)]
pub struct HttpScorer {
    pub endpoint: String,
    pub api_key: String,
}

#[cfg(feature = "http")]
impl HttpScorer {
    pub const ENV_URL: &'static str = "CONTIGUARD_SCORER_URL";
    pub const ENV_KEY: &'static str = "CONTIGUARD_SCORER_KEY";

    pub fn from_env() -> Option<Self> {
        Some(Self {
            endpoint: std::env::var(Self::ENV_URL).ok()?,
            api_key: std::env::var(Self::ENV_KEY).unwrap_or_default(),
        })
    }
}

#[cfg(feature = "http")]
impl ToxicityScorer for HttpScorer {
    fn score(&self, text: &str) -> Result<f64, ScorerError> {
        let body = serde_json::json!({
            "comment": { "text": text },
            "languages": ["en"],
            "requestedAttributes": { "TOXICITY": {} }
        });
        let url = format!("{}?key={}", self.endpoint, self.api_key);
        let mut resp = ureq::post(&url)
            .send_json(&body)
            .map_err(|e| ScorerError::Request(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ScorerError::Response(e.to_string()))?;
        value["attributeScores"]["TOXICITY"]["summaryScore"]["value"]
            .as_f64()
            .ok_or_else(|| ScorerError::Response(value.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_ratio() {
        let s = LexiconScorer::new(["idiot".to_string(), "fool".to_string()].into_iter().collect());
        assert_eq!(s.score("you idiot").unwrap(), 0.5);
        assert_eq!(s.score("Fool! idiot").unwrap(), 1.0);
        assert_eq!(s.score("hello there").unwrap(), 0.0);
        assert_eq!(s.score("").unwrap(), 0.0);
    }
}
