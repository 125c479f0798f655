//! Semantic enriching: How-Why-What prompting, auxiliary-information
//! acquisition and the cooperation gate that fuses auxiliary features.
//!
//! The client holds no trainable state; only [`GateParams`] are learned.

mod client;
pub mod gate;
mod stub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{ChatBackend, Enricher, EnricherConfig};
#[cfg(feature = "http")]
pub use client::HttpChatBackend;
pub use gate::{cooperate, cooperate_backward, gate_backward, gate_forward, gate_weights, GateMode, GateParams, GateTrace};
pub use stub::StubDeobfuscator;

#[derive(Debug, Error)]
pub enum EnrichError {
    #[error("feature dimensions differ: gate {expected}, perturbed {perturbed}, auxiliary {auxiliary}")]
    DimensionMismatch {
        expected: usize,
        perturbed: usize,
        auxiliary: usize,
    },
    #[error("invalid gate: {0}")]
    Gate(String),
    #[error("backend request failed: {0}")]
    Backend(String),
    #[error("response lacks a {0} section")]
    MissingSection(&'static str),
    #[error("cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Llm,
    Stub,
}

/// Possible meaning and toxicity clues for one text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxiliaryInfo {
    pub how: String,
    pub why: String,
    /// Possible meaning followed by toxicity-related clues.
    pub what: String,
    pub provider: Provider,
    pub raw_response: String,
}

/// Three-stage interrogation prompt embedding `text` verbatim.
pub fn build_prompt(text: &str) -> String {
    format!(
        "You will analyze a piece of online text that may hide its meaning with \
         character tricks, abbreviations, lookalike symbols or distracting additions.\n\
         How: describe how you will uncover the possible meaning and any toxicity-related clues \
         in the text.\n\
         Why: explain why each of those steps reveals what the writer intended.\n\
         What: state the possible meaning of the text and list the toxicity-related clues you found.\n\
         Answer in exactly three labeled sections:\n\
         HOW: <your method>\n\
         WHY: <your reasoning>\n\
         WHAT: <possible meaning and toxicity clues>\n\n\
         Text: {text}"
    )
}

/// Splits a response into its `(how, why, what)` sections.
///
/// Labels are matched case-insensitively at line starts, optionally wrapped
/// in markdown emphasis. The WHAT section must be non-empty.
pub fn parse_sections(response: &str) -> Result<(String, String, String), EnrichError> {
    let mut sections: [Option<String>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in response.lines() {
        let trimmed = line.trim().trim_start_matches(['*', '#', ' ']);
        let upper = trimmed.to_ascii_uppercase();
        let label = ["HOW", "WHY", "WHAT"].iter().position(|l| {
            upper.starts_with(l) && upper[l.len()..].trim_start_matches('*').starts_with(':')
        });
        if let Some(idx) = label {
            let rest = trimmed[3 + usize::from(idx == 2)..]
                .trim_start_matches('*')
                .trim_start_matches(':')
                .trim_start_matches('*')
                .trim();
            sections[idx] = Some(rest.to_string());
            current = Some(idx);
        } else if let Some(idx) = current {
            let body = sections[idx].get_or_insert_with(String::new);
            if !line.trim().is_empty() {
                if !body.is_empty() {
                    body.push(' ');
                }
                body.push_str(line.trim());
            }
        }
    }
    let [how, why, what] = sections;
    let what = what.filter(|w| !w.is_empty()).ok_or(EnrichError::MissingSection("WHAT"))?;
    Ok((
        how.ok_or(EnrichError::MissingSection("HOW"))?,
        why.ok_or(EnrichError::MissingSection("WHY"))?,
        what,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_has_stages_and_text() {
        let p = build_prompt("u r an id10t");
        for key in ["How", "Why", "What", "HOW:", "WHY:", "WHAT:"] {
            assert!(p.contains(key), "{key}");
        }
        assert!(p.contains("u r an id10t"));
        assert_eq!(p, build_prompt("u r an id10t"));
    }

    #[test]
    fn parses_labeled_sections() {
        let r = "HOW: undo symbols\nWHY: they hide words\nWHAT: possible meaning: you idiot.\ntoxicity clues: idiot";
        let (how, why, what) = parse_sections(r).unwrap();
        assert_eq!(how, "undo symbols");
        assert_eq!(why, "they hide words");
        assert_eq!(what, "possible meaning: you idiot. toxicity clues: idiot");
    }

    #[test]
    fn parses_markdown_labels() {
        let r = "**How:** a\n**Why:** b\n**What:** c";
        assert_eq!(parse_sections(r).unwrap(), ("a".into(), "b".into(), "c".into()));
    }

    #[test]
    fn missing_what_is_an_error() {
        assert!(matches!(parse_sections("HOW: a\nWHY: b"), Err(EnrichError::MissingSection("WHAT"))));
        assert!(parse_sections("HOW: a\nWHY: b\nWHAT:   ").is_err());
    }
}
