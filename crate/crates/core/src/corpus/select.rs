//! Toxicity-relevant word selection.

use std::collections::{BTreeMap, BTreeSet};

use super::{CorpusError, LabeledText, ToxicityScorer};
use crate::perturb::lookup_form;

/// `text` with every token whose lookup form equals `word` removed.
pub fn remove_word(text: &str, word: &str) -> String {
    text.split_whitespace()
        .filter(|t| lookup_form(t) != word)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Mean drop in toxicity score when `word` is removed from each text.
pub fn toxicity_drop_expectation(
    word: &str,
    texts: &[&LabeledText],
    scorer: &dyn ToxicityScorer,
) -> Result<f64, CorpusError> {
    if texts.is_empty() {
        return Err(CorpusError::NoTexts(word.to_string()));
    }
    let score = |id: &str, text: &str| {
        scorer.score(text).map_err(|source| CorpusError::Scorer {
            id: id.to_string(),
            source,
        })
    };
    let mut total = 0.0;
    for t in texts {
        let before = score(&t.id, &t.text)?;
        let after = score(&t.id, &remove_word(&t.text, word))?;
        total += before - after;
    }
    Ok(total / texts.len() as f64)
}

fn doc_words(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(lookup_form)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Document-presence association ratio `p(w, toxic) / (p(w) p(toxic))`.
///
/// Returns 0 for a word absent from the corpus or a corpus with no toxic
/// documents.
pub fn mutual_information(word: &str, corpus: &[LabeledText]) -> f64 {
    let n = corpus.len();
    let mut with_word = 0usize;
    let mut with_word_toxic = 0usize;
    let mut toxic = 0usize;
    for doc in corpus {
        let present = doc.text.split_whitespace().any(|t| lookup_form(t) == word);
        toxic += doc.is_toxic() as usize;
        if present {
            with_word += 1;
            with_word_toxic += doc.is_toxic() as usize;
        }
    }
    ratio(n, with_word, with_word_toxic, toxic)
}

fn ratio(n: usize, with_word: usize, joint: usize, class: usize) -> f64 {
    if n == 0 || with_word == 0 || class == 0 {
        return 0.0;
    }
    let n = n as f64;
    let p_joint = joint as f64 / n;
    let p_word = with_word as f64 / n;
    let p_class = class as f64 / n;
    p_joint / (p_word * p_class)
}

/// Document frequencies for scoring every word of a corpus at once.
#[derive(Debug, Clone, Default)]
pub struct MiTable {
    docs: usize,
    toxic_docs: usize,
    freq: BTreeMap<String, (usize, usize)>,
}

impl MiTable {
    pub fn from_corpus(corpus: &[LabeledText]) -> Self {
        let mut table = Self {
            docs: corpus.len(),
            ..Default::default()
        };
        for doc in corpus {
            table.toxic_docs += doc.is_toxic() as usize;
            for w in doc_words(&doc.text) {
                let e = table.freq.entry(w).or_default();
                e.0 += 1;
                e.1 += doc.is_toxic() as usize;
            }
        }
        table
    }

    pub fn mi(&self, word: &str) -> f64 {
        let (with_word, joint) = self.freq.get(word).copied().unwrap_or((0, 0));
        ratio(self.docs, with_word, joint, self.toxic_docs)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.freq.keys().map(String::as_str)
    }

    pub fn scores(&self) -> Vec<(String, f64)> {
        self.freq.keys().map(|w| (w.clone(), self.mi(w))).collect()
    }
}

/// Words whose score exceeds mean + population standard deviation.
pub fn select_spurious(scores: &[(String, f64)]) -> BTreeSet<String> {
    if scores.len() < 2 {
        return BTreeSet::new();
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = scores.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / n;
    let threshold = mean + var.sqrt();
    scores
        .iter()
        .filter(|(_, v)| *v > threshold)
        .map(|(w, _)| w.clone())
        .collect()
}

/// Output of the four word-selection strategies.
#[derive(Debug, Clone, Default)]
pub struct RelevantWords {
    pub online: BTreeSet<String>,
    pub scored_toxic: BTreeSet<String>,
    pub increasing: BTreeSet<String>,
    pub spurious: BTreeSet<String>,
}

impl RelevantWords {
    pub fn all(&self) -> BTreeSet<String> {
        self.online
            .iter()
            .chain(&self.scored_toxic)
            .chain(&self.increasing)
            .chain(&self.spurious)
            .cloned()
            .collect()
    }
}

/// Runs the online-list, scored-word, toxicity-drop and spurious-correlation
/// strategies over `corpus`.
pub fn select_toxicity_relevant(
    corpus: &[LabeledText],
    online: &BTreeSet<String>,
    scorer: &dyn ToxicityScorer,
) -> Result<RelevantWords, CorpusError> {
    let mut containing: BTreeMap<String, Vec<&LabeledText>> = BTreeMap::new();
    for doc in corpus {
        for w in doc_words(&doc.text) {
            containing.entry(w).or_default().push(doc);
        }
    }
    let present: BTreeSet<String> = containing.keys().cloned().collect();

    let mut out = RelevantWords {
        online: online.intersection(&present).cloned().collect(),
        ..Default::default()
    };
    for (word, texts) in &containing {
        if !word.chars().any(char::is_alphabetic) {
            continue;
        }
        let word_score = scorer.score(word).map_err(|source| CorpusError::Scorer {
            id: format!("word:{word}"),
            source,
        })?;
        if word_score >= 0.5 {
            out.scored_toxic.insert(word.clone());
        }
        if toxicity_drop_expectation(word, texts, scorer)? > 0.0 {
            out.increasing.insert(word.clone());
        }
    }
    out.spurious = select_spurious(&MiTable::from_corpus(corpus).scores());
    log::info!(
        "relevant words: online {}, scored {}, increasing {}, spurious {}",
        out.online.len(),
        out.scored_toxic.len(),
        out.increasing.len(),
        out.spurious.len()
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LexiconScorer, ScorerError};
    use proptest::prelude::*;
    use std::collections::HashMap;

    struct Table(HashMap<String, f64>);

    impl ToxicityScorer for Table {
        fn score(&self, text: &str) -> Result<f64, ScorerError> {
            self.0
                .get(text)
                .copied()
                .ok_or_else(|| ScorerError::Response(text.to_string()))
        }
    }

    fn table(entries: &[(&str, f64)]) -> Table {
        Table(entries.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    #[test]
    fn drop_single_text() {
        let t = LabeledText::new("a", "you idiot", 1);
        let s = table(&[("you idiot", 0.8), ("you", 0.3)]);
        let e = toxicity_drop_expectation("idiot", &[&t], &s).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn drop_two_texts() {
        let a = LabeledText::new("a", "x idiot", 1);
        let b = LabeledText::new("b", "y idiot", 1);
        let s = table(&[("x idiot", 0.9), ("x", 0.4), ("y idiot", 0.7), ("y", 0.5)]);
        let e = toxicity_drop_expectation("idiot", &[&a, &b], &s).unwrap();
        assert!((e - 0.35).abs() < 1e-12);
    }

    #[test]
    fn drop_zero_when_removal_is_neutral() {
        let a = LabeledText::new("a", "hello there", 0);
        let s = table(&[("hello there", 0.2), ("there", 0.2)]);
        assert_eq!(toxicity_drop_expectation("hello", &[&a], &s).unwrap(), 0.0);
    }

    #[test]
    fn drop_errors_carry_text_id() {
        let a = LabeledText::new("sample-7", "unknown text", 0);
        match toxicity_drop_expectation("text", &[&a], &table(&[])) {
            Err(CorpusError::Scorer { id, .. }) => assert_eq!(id, "sample-7"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            toxicity_drop_expectation("w", &[], &table(&[])),
            Err(CorpusError::NoTexts(_))
        ));
    }

    #[test]
    fn mi_count_arithmetic() {
        let corpus = vec![
            LabeledText::new("1", "you idiot", 1),
            LabeledText::new("2", "idiot again", 1),
            LabeledText::new("3", "nice day", 0),
            LabeledText::new("4", "good day", 0),
        ];
        assert!((mutual_information("idiot", &corpus) - 2.0).abs() < 1e-12);
        assert_eq!(mutual_information("absent", &corpus), 0.0);
        let uniform = vec![
            LabeledText::new("1", "the a", 1),
            LabeledText::new("2", "the b", 0),
            LabeledText::new("3", "c", 1),
            LabeledText::new("4", "d", 0),
        ];
        assert!((mutual_information("the", &uniform) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spurious_threshold_examples() {
        let s = |v: &[f64]| -> Vec<(String, f64)> {
            v.iter().enumerate().map(|(i, x)| (format!("w{i}"), *x)).collect()
        };
        // mean 2, population std sqrt(3)
        let picked = select_spurious(&s(&[1.0, 1.0, 1.0, 5.0]));
        assert_eq!(picked, ["w3".to_string()].into_iter().collect());
        assert!(select_spurious(&s(&[2.0, 2.0, 2.0])).is_empty());
        assert!(select_spurious(&s(&[0.0, 4.0])).is_empty());
        assert!(select_spurious(&s(&[9.0])).is_empty());
    }

    #[test]
    fn relevant_word_strategies() {
        let corpus = vec![
            LabeledText::new("1", "you are an idiot", 1),
            LabeledText::new("2", "what an idiot", 1),
            LabeledText::new("3", "you are kind", 0),
            LabeledText::new("4", "what a day", 0),
        ];
        let scorer = LexiconScorer::new(["idiot".to_string()].into_iter().collect());
        let online: BTreeSet<String> = ["idiot".to_string(), "moron".to_string()].into_iter().collect();
        let words = select_toxicity_relevant(&corpus, &online, &scorer).unwrap();
        assert!(words.online.contains("idiot") && !words.online.contains("moron"));
        assert!(words.scored_toxic.contains("idiot"));
        assert!(words.increasing.contains("idiot"));
        assert!(!words.increasing.contains("you"));
        assert!(words.all().contains("idiot"));
    }

    fn brute_mi(word: &str, corpus: &[(Vec<&str>, u8)]) -> f64 {
        let n = corpus.len() as f64;
        let mut joint = 0.0;
        let mut marg_w = 0.0;
        let mut marg_c = 0.0;
        for (words, label) in corpus {
            let has = words.contains(&word);
            if has {
                marg_w += 1.0;
            }
            if *label == 1 {
                marg_c += 1.0;
            }
            if has && *label == 1 {
                joint += 1.0;
            }
        }
        if marg_w == 0.0 || marg_c == 0.0 {
            return 0.0;
        }
        (joint / n) / ((marg_w / n) * (marg_c / n))
    }

    proptest! {
        #[test]
        fn mi_matches_counting_oracle(
            docs in prop::collection::vec((prop::collection::vec(0usize..8, 1..6), 0u8..2), 1..60)
        ) {
            const VOCAB: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];
            let raw: Vec<(Vec<&str>, u8)> = docs
                .iter()
                .map(|(ws, l)| (ws.iter().map(|&i| VOCAB[i]).collect(), *l))
                .collect();
            let corpus: Vec<LabeledText> = raw
                .iter()
                .enumerate()
                .map(|(i, (ws, l))| LabeledText::new(i.to_string(), ws.join(" "), *l))
                .collect();
            let table = MiTable::from_corpus(&corpus);
            for w in VOCAB {
                let oracle = brute_mi(w, &raw);
                prop_assert!((mutual_information(w, &corpus) - oracle).abs() <= 1e-12);
                prop_assert!((table.mi(w) - oracle).abs() <= 1e-12);
            }
        }

        #[test]
        fn drop_expectation_is_linear_in_scores(scale in 0.0f64..1.0) {
            struct Scaled<'a>(&'a LexiconScorer, f64);
            impl ToxicityScorer for Scaled<'_> {
                fn score(&self, text: &str) -> Result<f64, ScorerError> {
                    Ok(self.0.score(text)? * self.1)
                }
            }
            let base = LexiconScorer::new(["idiot".to_string(), "fool".to_string()].into_iter().collect());
            let texts = [
                LabeledText::new("a", "you idiot fool", 1),
                LabeledText::new("b", "an idiot here now", 1),
            ];
            let refs: Vec<&LabeledText> = texts.iter().collect();
            let e = toxicity_drop_expectation("idiot", &refs, &base).unwrap();
            let es = toxicity_drop_expectation("idiot", &refs, &Scaled(&base, scale)).unwrap();
            prop_assert!((es - scale * e).abs() < 1e-12);
        }
    }
}
