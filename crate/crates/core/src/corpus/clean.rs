use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{CorpusError, LabeledText};
use crate::perturb::lookup_form;

/// Decides whether a word is known vocabulary.
pub trait SpellChecker {
    fn is_known(&self, word: &str) -> bool;
}

/// Treats every word as known.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl SpellChecker for AcceptAll {
    fn is_known(&self, _word: &str) -> bool {
        true
    }
}

/// Dictionary-file lookup on the lowercase, punctuation-stripped form.
#[derive(Debug, Clone, Default)]
pub struct DictionaryChecker {
    words: HashSet<String>,
}

impl DictionaryChecker {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words.into_iter().map(|w| w.as_ref().trim().to_lowercase()).collect(),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_words(text.lines().filter(|l| !l.trim().is_empty())))
    }
}

impl SpellChecker for DictionaryChecker {
    fn is_known(&self, word: &str) -> bool {
        let form = lookup_form(word);
        // numbers and pure punctuation are not spelling errors
        form.is_empty() || form.chars().all(|c| c.is_numeric()) || self.words.contains(&form)
    }
}

/// Per-rule drop counts from [`clean`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CleanReport {
    pub input: usize,
    pub dropped_private: usize,
    pub dropped_meaningless: usize,
    pub dropped_unknown: usize,
    pub stripped_tokens: usize,
    pub kept: usize,
}

fn private_patterns() -> &'static [Regex] {
    static PATTERNS: OnceLock<Vec<Regex>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(\.[A-Za-z0-9\-]+)+",
            r"(?i)\buser(\s+talk)?:\S+",
            r"(?:^|\s)@[A-Za-z0-9_]{2,}",
            r"\b\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3}\b",
        ]
        .iter()
        .map(|p| Regex::new(p).expect("valid pattern"))
        .collect()
    })
}

fn contains_private(text: &str) -> bool {
    private_patterns().iter().any(|re| re.is_match(text))
}

/// Removes private information, meaningless short repeats and unknown words.
///
/// A sample under five words is meaningless when it repeats a word or
/// duplicates an earlier short sample. Unknown tokens are stripped; the
/// sample is dropped only when more than half of its tokens are unknown.
pub fn clean(raw: &[LabeledText], checker: &dyn SpellChecker) -> (Vec<LabeledText>, CleanReport) {
    let mut report = CleanReport {
        input: raw.len(),
        ..Default::default()
    };
    let mut short_seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for sample in raw {
        if contains_private(&sample.text) {
            report.dropped_private += 1;
            continue;
        }
        let tokens: Vec<&str> = sample.text.split_whitespace().collect();
        if tokens.len() < 5 {
            let forms: Vec<String> = tokens.iter().map(|t| lookup_form(t)).collect();
            let distinct: BTreeSet<&String> = forms.iter().collect();
            let normalized = forms.join(" ");
            let repeated_word = distinct.len() < forms.len();
            if tokens.is_empty() || repeated_word || !short_seen.insert(normalized) {
                report.dropped_meaningless += 1;
                continue;
            }
        }
        let known: Vec<&str> = tokens.iter().copied().filter(|t| checker.is_known(t)).collect();
        let unknown = tokens.len() - known.len();
        if unknown * 2 > tokens.len() {
            report.dropped_unknown += 1;
            continue;
        }
        let mut kept = sample.clone();
        if unknown > 0 {
            report.stripped_tokens += unknown;
            kept.text = known.join(" ");
        }
        out.push(kept);
    }
    report.kept = out.len();
    log::info!(
        "clean: kept {} of {} (private {}, meaningless {}, unknown {}, stripped tokens {})",
        report.kept,
        report.input,
        report.dropped_private,
        report.dropped_meaningless,
        report.dropped_unknown,
        report.stripped_tokens
    );
    (out, report)
}

/// Downsamples the majority class to a 1:1 ratio, keeping input order.
pub fn rebalance(data: &[LabeledText], seed: u64) -> Result<Vec<LabeledText>, CorpusError> {
    let toxic: Vec<usize> = (0..data.len()).filter(|&i| data[i].is_toxic()).collect();
    let non_toxic: Vec<usize> = (0..data.len()).filter(|&i| !data[i].is_toxic()).collect();
    if toxic.is_empty() || non_toxic.is_empty() {
        return Err(CorpusError::MissingClass {
            toxic: toxic.len(),
            non_toxic: non_toxic.len(),
        });
    }
    let n = toxic.len().min(non_toxic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::with_capacity(2 * n);
    for mut group in [toxic, non_toxic] {
        if group.len() > n {
            group.shuffle(&mut rng);
            group.truncate(n);
        }
        keep.extend(group);
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| data[i].clone()).collect())
}
