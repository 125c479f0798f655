//! Perturbation-wise dataset construction.
//!
//! Stage one cleans raw labelled text, rebalances the classes and selects
//! toxicity-relevant words. Stage three attacks a reference detector with the
//! perturbation operators and keeps the evading samples, split 6:1:3 per kind.

mod build;
mod clean;
pub mod io;
mod scorer;
mod select;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::enrich::AuxiliaryInfo;
use crate::perturb::{PerturbError, PerturbationKind};

pub use build::{
    build_dynescape, source_id, split_counts, BuildParams, BuildReport, Classify, KindReport,
    ThresholdClassifier,
};
pub use clean::{clean, rebalance, AcceptAll, CleanReport, DictionaryChecker, SpellChecker};
#[cfg(feature = "http")]
pub use scorer::HttpScorer;
pub use scorer::{LexiconScorer, ScorerError, ToxicityScorer};
pub use select::{
    mutual_information, remove_word, select_spurious, select_toxicity_relevant,
    toxicity_drop_expectation, MiTable, RelevantWords,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("rebalance needs both labels; toxic={toxic}, non-toxic={non_toxic}")]
    MissingClass { toxic: usize, non_toxic: usize },
    #[error("no texts contain `{0}`")]
    NoTexts(String),
    #[error("scoring sample {id} failed: {source}")]
    Scorer {
        id: String,
        #[source]
        source: ScorerError,
    },
    #[error("invalid label {label} for sample {id}")]
    InvalidLabel { id: String, label: u8 },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Which perturbation produced a sample; `ordinary` for clean text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Perturbation {
    #[default]
    Ordinary,
    Kind(PerturbationKind),
}

impl Perturbation {
    pub fn kind(self) -> Option<PerturbationKind> {
        match self {
            Self::Ordinary => None,
            Self::Kind(k) => Some(k),
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ordinary => f.write_str("ordinary"),
            Self::Kind(k) => f.write_str(k.name()),
        }
    }
}

impl FromStr for Perturbation {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("ordinary") {
            Ok(Self::Ordinary)
        } else {
            s.parse().map(Self::Kind)
        }
    }
}

impl Serialize for Perturbation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Perturbation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One labelled sample; the JSON Lines record of the dataset exchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub id: String,
    pub text: String,
    /// 0 = non-toxic, 1 = toxic.
    pub label: u8,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub aux: Option<AuxiliaryInfo>,
}

impl LabeledText {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: u8) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            perturbation: Perturbation::Ordinary,
            split: None,
            aux: None,
        }
    }

    pub fn is_toxic(&self) -> bool {
        self.label == 1
    }
}

/// A perturbation-wise dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledText>,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledText>) -> Self {
        Self { samples }
    }

    /// Label range and id uniqueness.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if s.label > 1 {
                return Err(CorpusError::InvalidLabel {
                    id: s.id.clone(),
                    label: s.label,
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(())
    }

    pub fn kinds(&self) -> Vec<PerturbationKind> {
        let mut kinds: Vec<PerturbationKind> =
            self.samples.iter().filter_map(|s| s.perturbation.kind()).collect();
        kinds.sort_unstable();
        kinds.dedup();
        kinds
    }

    pub fn select(&self, kind: PerturbationKind, split: Split) -> Vec<&LabeledText> {
        self.samples
            .iter()
            .filter(|s| s.perturbation == Perturbation::Kind(kind) && s.split == Some(split))
            .collect()
    }

    /// `(train, valid, test)` counts per kind.
    pub fn split_summary(&self) -> BTreeMap<PerturbationKind, (usize, usize, usize)> {
        let mut out: BTreeMap<PerturbationKind, (usize, usize, usize)> = BTreeMap::new();
        for s in &self.samples {
            let (Some(kind), Some(split)) = (s.perturbation.kind(), s.split) else {
                continue;
            };
            let e = out.entry(kind).or_default();
            match split {
                Split::Train => e.0 += 1,
                Split::Valid => e.1 += 1,
                Split::Test => e.2 += 1,
            }
        }
        out
    }
}
