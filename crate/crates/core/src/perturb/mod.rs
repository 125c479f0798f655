//! Evasive perturbation operators.
//!
//! Nine operators across three granularities: character level (insert,
//! remove, repeat, swap, homoglyph), word/phrase level (maskword,
//! abbreviation) and sentence level (distract, authorization). Every
//! operator is a pure function of `(text, config, lexicons)`.

mod lexicon;
mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::Lexicons;
pub use ops::{
    apply, apply_at, authorize_prefix, lookup_form, sample_targets, select_targets, token_spans,
};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("unknown perturbation kind `{0}`")]
    UnknownKind(String),
    #[error("perturbation rate must lie in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("lexicon table `{0}` is empty")]
    EmptyLexicon(&'static str),
    #[error("malformed line {line} in {table}")]
    Malformed { table: &'static str, line: usize },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Identity of a perturbation domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Insert,
    Remove,
    Repeat,
    Swap,
    Homoglyph,
    Maskword,
    Abbreviation,
    Distract,
    Authorization,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 9] = [
        Self::Insert,
        Self::Remove,
        Self::Repeat,
        Self::Swap,
        Self::Homoglyph,
        Self::Maskword,
        Self::Abbreviation,
        Self::Distract,
        Self::Authorization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Insert => "insert",
            Self::Remove => "remove",
            Self::Repeat => "repeat",
            Self::Swap => "swap",
            Self::Homoglyph => "homoglyph",
            Self::Maskword => "maskword",
            Self::Abbreviation => "abbreviation",
            Self::Distract => "distract",
            Self::Authorization => "authorization",
        }
    }

    /// Operators that rewrite individual target tokens.
    pub fn is_token_level(self) -> bool {
        !matches!(self, Self::Distract | Self::Authorization)
    }

    /// Parses a comma-separated list such as `insert,swap`.
    pub fn parse_list(list: &str) -> Result<Vec<Self>, PerturbError> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "insert" => Self::Insert,
            "remove" | "mv" => Self::Remove,
            "repeat" => Self::Repeat,
            "swap" => Self::Swap,
            "homoglyph" | "homo" => Self::Homoglyph,
            "maskword" | "mask" => Self::Maskword,
            "abbreviation" | "abbr" => Self::Abbreviation,
            "distract" | "dis" => Self::Distract,
            "authorization" | "auth" => Self::Authorization,
            _ => return Err(PerturbError::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}

/// Parameters of a single `apply` call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub kind: PerturbationKind,
    /// Fraction of eligible tokens to perturb.
    pub rate: f64,
    pub seed: u64,
    /// Character positions edited per targeted token.
    pub edits_per_token: usize,
    /// Number of words in a distract prefix.
    pub distract_len: usize,
}

impl PerturbConfig {
    pub fn new(kind: PerturbationKind, seed: u64) -> Self {
        Self {
            kind,
            rate: 0.2,
            seed,
            edits_per_token: 1,
            distract_len: 5,
        }
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = rate;
        self
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(PerturbError::InvalidRate(self.rate));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_nine_kinds_with_unique_names() {
        let names: std::collections::BTreeSet<_> =
            PerturbationKind::ALL.iter().map(|k| k.name()).collect();
        assert_eq!(names.len(), 9);
        for k in PerturbationKind::ALL {
            assert_eq!(k.name().parse::<PerturbationKind>().unwrap(), k);
        }
    }

    #[test]
    fn unknown_kind_is_a_config_error() {
        assert!(matches!(
            "leet".parse::<PerturbationKind>(),
            Err(PerturbError::UnknownKind(_))
        ));
        assert!(PerturbationKind::parse_list("insert, swap").is_ok());
        assert!(PerturbationKind::parse_list("insert,bogus").is_err());
    }

    #[test]
    fn rate_bounds() {
        let base = PerturbConfig::new(PerturbationKind::Swap, 0);
        assert!(base.validate().is_ok());
        assert!(base.with_rate(1.0).validate().is_ok());
        assert!(base.with_rate(0.0).validate().is_err());
        assert!(base.with_rate(1.5).validate().is_err());
    }

    #[test]
    fn kinds_serialize_lowercase() {
        let json = serde_json::to_string(&PerturbationKind::Homoglyph).unwrap();
        assert_eq!(json, "\"homoglyph\"");
    }
}
