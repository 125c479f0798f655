//! Adversarial attack-and-select over the perturbation operators.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, LabeledText, Perturbation, Split, ToxicityScorer};
use crate::perturb::{self, lookup_form, token_spans, Lexicons, PerturbConfig, PerturbationKind};
use crate::util::derive_seed;

/// Anything that can label a text; the detector under attack.
pub trait Classify {
    /// Predicted label, 0 (non-toxic) or 1 (toxic).
    fn predict(&self, text: &str) -> u8;
}

/// Labels text toxic when a scorer reaches `threshold`.
pub struct ThresholdClassifier<S> {
    pub scorer: S,
    pub threshold: f64,
}

impl<S: ToxicityScorer> Classify for ThresholdClassifier<S> {
    fn predict(&self, text: &str) -> u8 {
        match self.scorer.score(text) {
            Ok(s) if s >= self.threshold => 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildParams {
    pub kinds: Vec<PerturbationKind>,
    /// Samples kept per kind, split evenly between the two labels.
    pub per_kind_quota: usize,
    pub seed: u64,
    pub rate: f64,
    pub edits_per_token: usize,
    pub distract_len: usize,
}

impl BuildParams {
    pub fn new(kinds: Vec<PerturbationKind>, per_kind_quota: usize, seed: u64) -> Self {
        Self {
            kinds,
            per_kind_quota,
            seed,
            rate: 0.2,
            edits_per_token: 1,
            distract_len: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindReport {
    pub toxic_attempted: usize,
    pub toxic_evaded: usize,
    pub non_toxic_kept: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub shortfall: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub per_kind: BTreeMap<PerturbationKind, KindReport>,
}

/// `(train, valid, test)` sizes for `n` samples at 6:1:3.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 6 / 10;
    let valid = n / 10;
    (train, valid, n - train - valid)
}

/// Perturbs `text` with `kind`; when no token is toxicity-relevant,
/// word-like tokens become eligible so both labels are perturbed alike.
fn perturb_sample(
    text: &str,
    config: &PerturbConfig,
    lexicons: &Lexicons,
) -> Result<String, CorpusError> {
    if !config.kind.is_token_level() || config.kind == PerturbationKind::Abbreviation {
        return Ok(perturb::apply(text, config, lexicons)?);
    }
    let spans = token_spans(text);
    let tokens: Vec<&str> = spans.iter().map(|&(s, e)| &text[s..e]).collect();
    let mut targets = perturb::select_targets(&tokens, lexicons, config);
    if targets.is_empty() {
        let wordlike: Vec<usize> = (0..tokens.len())
            .filter(|&i| lookup_form(tokens[i]).chars().filter(|c| c.is_alphabetic()).count() >= 2)
            .collect();
        targets = perturb::sample_targets(&wordlike, config.rate, config.seed);
    }
    Ok(perturb::apply_at(text, &targets, config, lexicons)?)
}

/// Builds the perturbation-wise dataset by attacking `detector`.
///
/// Toxic samples are kept only when the perturbed text is predicted
/// non-toxic; non-toxic samples are perturbed the same way and kept. No
/// source sample is used by two kinds. Kept samples are split 6:1:3 with
/// labels interleaved so each split stays balanced.
pub fn build_dynescape(
    clean: &[LabeledText],
    detector: &dyn Classify,
    params: &BuildParams,
    lexicons: &Lexicons,
) -> Result<(Dataset, BuildReport), CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut toxic: Vec<&LabeledText> = clean.iter().filter(|s| s.is_toxic()).collect();
    let mut non_toxic: Vec<&LabeledText> = clean.iter().filter(|s| !s.is_toxic()).collect();
    toxic.shuffle(&mut rng);
    non_toxic.shuffle(&mut rng);

    let mut used: HashSet<&str> = HashSet::new();
    let mut samples = Vec::new();
    let mut report = BuildReport::default();

    for (kind_idx, &kind) in params.kinds.iter().enumerate() {
        let want_toxic = params.per_kind_quota - params.per_kind_quota / 2;
        let want_non = params.per_kind_quota / 2;
        let mut entry = KindReport::default();
        let config_for = |id: &str| PerturbConfig {
            kind,
            rate: params.rate,
            seed: derive_seed(params.seed, kind_idx as u64, id),
            edits_per_token: params.edits_per_token,
            distract_len: params.distract_len,
        };

        let mut kept_toxic = Vec::new();
        for src in &toxic {
            if kept_toxic.len() == want_toxic {
                break;
            }
            if used.contains(src.id.as_str()) {
                continue;
            }
            let text = perturb_sample(&src.text, &config_for(&src.id), lexicons)?;
            if text == src.text {
                continue;
            }
            entry.toxic_attempted += 1;
            if detector.predict(&text) == 0 {
                used.insert(src.id.as_str());
                kept_toxic.push(derived(src, kind, text));
            }
        }
        entry.toxic_evaded = kept_toxic.len();

        let mut kept_non = Vec::new();
        for src in &non_toxic {
            if kept_non.len() == want_non {
                break;
            }
            if used.contains(src.id.as_str()) {
                continue;
            }
            let text = perturb_sample(&src.text, &config_for(&src.id), lexicons)?;
            if text == src.text {
                continue;
            }
            used.insert(src.id.as_str());
            kept_non.push(derived(src, kind, text));
        }
        entry.non_toxic_kept = kept_non.len();

        let kept = kept_toxic.len() + kept_non.len();
        entry.shortfall = params.per_kind_quota.saturating_sub(kept);
        if entry.shortfall > 0 {
            log::warn!(
                "{kind}: only {kept} of {} samples (toxic evaders {}, non-toxic {})",
                params.per_kind_quota,
                kept_toxic.len(),
                kept_non.len()
            );
        }

        let mut interleaved = Vec::with_capacity(kept);
        let mut t_iter = kept_toxic.into_iter();
        let mut n_iter = kept_non.into_iter();
        loop {
            let (a, b) = (t_iter.next(), n_iter.next());
            if a.is_none() && b.is_none() {
                break;
            }
            interleaved.extend(a);
            interleaved.extend(b);
        }
        let (train, valid, _) = split_counts(interleaved.len());
        for (i, mut s) in interleaved.into_iter().enumerate() {
            s.split = Some(if i < train {
                Split::Train
            } else if i < train + valid {
                Split::Valid
            } else {
                Split::Test
            });
            match s.split {
                Some(Split::Train) => entry.train += 1,
                Some(Split::Valid) => entry.valid += 1,
                _ => entry.test += 1,
            }
            samples.push(s);
        }
        report.per_kind.insert(kind, entry);
    }
    Ok((Dataset::new(samples), report))
}

fn derived(src: &LabeledText, kind: PerturbationKind, text: String) -> LabeledText {
    LabeledText {
        id: format!("{}@{}", src.id, kind.name()),
        text,
        label: src.label,
        perturbation: Perturbation::Kind(kind),
        split: None,
        aux: None,
    }
}

/// Source id of a sample produced by [`build_dynescape`].
pub fn source_id(id: &str) -> &str {
    id.rsplit_once('@').map(|(s, _)| s).unwrap_or(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LexiconScorer;

    #[test]
    fn split_is_sixty_ten_thirty() {
        assert_eq!(split_counts(4308), (2584, 430, 1294));
        assert_eq!(split_counts(100), (60, 10, 30));
        assert_eq!(split_counts(500), (300, 50, 150));
    }

    fn toy_corpus(n: usize) -> Vec<LabeledText> {
        (0..n)
            .flat_map(|i| {
                [
                    LabeledText::new(format!("t{i}"), format!("you are an idiot number {i}"), 1),
                    LabeledText::new(format!("n{i}"), format!("you are a friend number {i}"), 0),
                ]
            })
            .collect()
    }

    fn lexicon_detector() -> ThresholdClassifier<LexiconScorer> {
        ThresholdClassifier {
            scorer: LexiconScorer::new(["idiot".to_string()].into_iter().collect()),
            threshold: 1e-9,
        }
    }

    #[test]
    fn kinds_use_disjoint_sources_and_evade() {
        let lex = Lexicons::builtin();
        let corpus = toy_corpus(200);
        let kinds = vec![PerturbationKind::Insert, PerturbationKind::Swap, PerturbationKind::Homoglyph];
        let detector = lexicon_detector();
        let (data, report) =
            build_dynescape(&corpus, &detector, &BuildParams::new(kinds.clone(), 100, 4), &lex).unwrap();
        data.validate().unwrap();
        let mut per_kind: BTreeMap<PerturbationKind, HashSet<&str>> = BTreeMap::new();
        for s in &data.samples {
            per_kind
                .entry(s.perturbation.kind().unwrap())
                .or_default()
                .insert(source_id(&s.id));
            if s.is_toxic() {
                assert_eq!(detector.predict(&s.text), 0, "{}", s.text);
            }
        }
        for a in &kinds {
            for b in &kinds {
                if a < b {
                    assert!(per_kind[a].is_disjoint(&per_kind[b]));
                }
            }
        }
        for k in &kinds {
            let r = &report.per_kind[k];
            assert_eq!((r.train, r.valid, r.test), (60, 10, 30));
            assert_eq!(r.shortfall, 0);
        }
        let toxic_train = data.select(PerturbationKind::Swap, Split::Train).iter().filter(|s| s.is_toxic()).count();
        assert_eq!(toxic_train, 30);
    }

    #[test]
    fn non_toxic_samples_are_perturbed_too() {
        let lex = Lexicons::builtin();
        let corpus = toy_corpus(40);
        let (data, _) = build_dynescape(
            &corpus,
            &lexicon_detector(),
            &BuildParams::new(vec![PerturbationKind::Repeat], 20, 1),
            &lex,
        )
        .unwrap();
        for s in data.samples.iter().filter(|s| !s.is_toxic()) {
            let src = corpus.iter().find(|c| c.id == source_id(&s.id)).unwrap();
            assert_ne!(src.text, s.text);
        }
    }

    #[test]
    fn shortfall_is_reported_not_fatal() {
        let lex = Lexicons::builtin();
        let corpus = toy_corpus(10);
        let (data, report) = build_dynescape(
            &corpus,
            &lexicon_detector(),
            &BuildParams::new(vec![PerturbationKind::Insert, PerturbationKind::Swap], 16, 0),
            &lex,
        )
        .unwrap();
        assert_eq!(report.per_kind[&PerturbationKind::Insert].shortfall, 0);
        assert_eq!(report.per_kind[&PerturbationKind::Swap].shortfall, 12);
        assert_eq!(data.samples.len(), 20);
    }

    #[test]
    fn build_is_deterministic() {
        let lex = Lexicons::builtin();
        let corpus = toy_corpus(60);
        let params = BuildParams::new(vec![PerturbationKind::Maskword, PerturbationKind::Distract], 40, 3);
        let a = build_dynescape(&corpus, &lexicon_detector(), &params, &lex).unwrap().0;
        let b = build_dynescape(&corpus, &lexicon_detector(), &params, &lex).unwrap().0;
        assert_eq!(a, b);
    }
}
