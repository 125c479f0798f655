//! Dataset pipelines: raw or synthetic clean text, attack-and-select
//! against a reference detector, then enrichment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::synthetic::SyntheticCorpus;
use crate::corpus::{
    build_dynescape, clean, rebalance, select_toxicity_relevant, split_counts, BuildParams, BuildReport, CleanReport,
    Dataset, LabeledText, LexiconScorer, SpellChecker, ThresholdClassifier,
};
use crate::enrich::Enricher;
use crate::model::{fit, Components, DetectorParams, ModelConfig, Prepared, TextDetector, TrainConfig};
use crate::perturb::{Lexicons, PerturbationKind};
use crate::replay::MemoryBuffer;

/// Detector attacked while selecting evaders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// Plain detector trained on the clean corpus.
    Trained,
    /// Flags any text containing a toxic lexicon word.
    #[default]
    Keyword,
}

impl std::str::FromStr for ReferenceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trained" => Ok(Self::Trained),
            "keyword" => Ok(Self::Keyword),
            other => Err(format!("unknown reference detector `{other}` (expected trained or keyword)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSetup {
    /// Clean sentences generated per label.
    pub per_class: usize,
    pub per_kind_quota: usize,
    pub kinds: Vec<PerturbationKind>,
    pub seed: u64,
    pub rate: f64,
    pub edits_per_token: usize,
    pub distract_len: usize,
    pub reference: ReferenceKind,
}

impl Default for DeskSetup {
    fn default() -> Self {
        Self {
            per_class: 4000,
            per_kind_quota: 500,
            kinds: vec![
                PerturbationKind::Insert,
                PerturbationKind::Repeat,
                PerturbationKind::Swap,
                PerturbationKind::Homoglyph,
                PerturbationKind::Maskword,
            ],
            seed: 0,
            rate: 0.2,
            edits_per_token: 1,
            distract_len: 5,
            reference: ReferenceKind::default(),
        }
    }
}

/// Plain detector trained on clean text, the target of the attack.
pub fn reference_detector(clean: &[LabeledText], model: ModelConfig, seed: u64) -> Result<DetectorParams, HarnessError> {
    let refs: Vec<&LabeledText> = clean.iter().collect();
    let prepared = Prepared::batch(&refs, &model.encoder);
    let (train, _, _) = split_counts(prepared.len());
    let (train, valid) = prepared.split_at(train);
    let mut params = DetectorParams::init(model, seed);
    let config = TrainConfig {
        seed,
        max_epochs: 5,
        patience: 2,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fit(&mut params, train, &valid[..valid.len().min(500)], &MemoryBuffer::new(0), &config, &Components::STREAM, &mut rng)?;
    Ok(params)
}

/// Cleans and rebalances raw labelled text and fills the lexicons'
/// toxicity-relevant words from it.
pub fn prepare_raw(
    raw: &[LabeledText],
    checker: &dyn SpellChecker,
    base: &Lexicons,
    seed: u64,
) -> Result<(Vec<LabeledText>, Lexicons, CleanReport), HarnessError> {
    let (cleaned, report) = clean(raw, checker);
    let balanced = rebalance(&cleaned, seed).map_err(|e| HarnessError::Data(e.to_string()))?;
    let scorer = LexiconScorer::new(base.toxic_words.clone());
    let relevant = select_toxicity_relevant(&balanced, &base.toxic_words, &scorer)
        .map_err(|e| HarnessError::Data(e.to_string()))?;
    let mut lexicons = base.clone();
    lexicons.toxic_relevant_words.extend(relevant.all());
    Ok((balanced, lexicons, report))
}

/// Perturbs `clean` kind by kind and keeps the samples selected against
/// the configured reference detector. Samples carry no auxiliary text.
pub fn attack(
    clean: &[LabeledText],
    lexicons: &Lexicons,
    setup: &DeskSetup,
    model: ModelConfig,
) -> Result<(Dataset, BuildReport), HarnessError> {
    let mut params = BuildParams::new(setup.kinds.clone(), setup.per_kind_quota, setup.seed);
    params.rate = setup.rate;
    params.edits_per_token = setup.edits_per_token;
    params.distract_len = setup.distract_len;
    let built = match setup.reference {
        ReferenceKind::Trained => {
            let detector = reference_detector(clean, model, setup.seed)?;
            build_dynescape(clean, &TextDetector { params: &detector }, &params, lexicons)
        }
        ReferenceKind::Keyword => {
            let detector = ThresholdClassifier {
                scorer: LexiconScorer::new(lexicons.toxic_words.clone()),
                threshold: f64::MIN_POSITIVE,
            };
            build_dynescape(clean, &detector, &params, lexicons)
        }
    };
    built.map_err(|e| HarnessError::Data(e.to_string()))
}

/// Shuffled synthetic clean corpus and the lexicons extended with its key
/// words.
pub fn synthetic_clean(setup: &DeskSetup, base: &Lexicons) -> (Vec<LabeledText>, Lexicons) {
    let corpus = SyntheticCorpus::generate(setup.per_class, setup.seed, base);
    let lexicons = corpus.lexicons(base);
    let mut clean = corpus.samples;
    clean.shuffle(&mut ChaCha8Rng::seed_from_u64(setup.seed ^ 0x5eed));
    (clean, lexicons)
}

/// Synthetic corpus, attack-and-select and stub enrichment.
pub fn build_desk_dataset(
    setup: &DeskSetup,
    base: &Lexicons,
    model: ModelConfig,
) -> Result<(Dataset, BuildReport), HarnessError> {
    let (clean, lexicons) = synthetic_clean(setup, base);
    let (mut dataset, report) = attack(&clean, &lexicons, setup, model)?;
    Enricher::stub(&lexicons).enrich_all(&mut dataset.samples);
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AcceptAll, Split};
    use crate::perturb::PerturbationKind;

    fn small() -> DeskSetup {
        DeskSetup {
            per_class: 300,
            per_kind_quota: 40,
            kinds: vec![PerturbationKind::Swap, PerturbationKind::Homoglyph],
            ..Default::default()
        }
    }

    #[test]
    fn desk_dataset_meets_quota_with_aux() {
        let (data, report) = build_desk_dataset(&small(), &Lexicons::builtin(), ModelConfig::default()).unwrap();
        data.validate().unwrap();
        for kind in [PerturbationKind::Swap, PerturbationKind::Homoglyph] {
            assert_eq!(report.per_kind[&kind].shortfall, 0);
            assert_eq!(data.select(kind, Split::Train).len(), 24);
        }
        assert!(data.samples.iter().all(|s| s.aux.is_some()));
    }

    #[test]
    fn keyword_evaders_lose_every_toxic_word() {
        let setup = small();
        let (clean, lexicons) = synthetic_clean(&setup, &Lexicons::builtin());
        let (data, _) = attack(&clean, &lexicons, &setup, ModelConfig::default()).unwrap();
        let detector = ThresholdClassifier {
            scorer: LexiconScorer::new(lexicons.toxic_words.clone()),
            threshold: f64::MIN_POSITIVE,
        };
        use crate::corpus::Classify;
        for s in data.samples.iter().filter(|s| s.is_toxic()) {
            assert_eq!(detector.predict(&s.text), 0, "{}", s.text);
        }
    }

    #[test]
    fn raw_preparation_collects_relevant_words() {
        let (clean, _) = synthetic_clean(&small(), &Lexicons::builtin());
        let base = Lexicons::builtin();
        let (balanced, lexicons, _) = prepare_raw(&clean, &AcceptAll, &base, 0).unwrap();
        let toxic = balanced.iter().filter(|s| s.is_toxic()).count();
        assert_eq!(2 * toxic, balanced.len());
        assert!(lexicons.toxic_relevant_words.len() > base.toxic_relevant_words.len());
    }
}
