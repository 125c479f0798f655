//! Deterministic offline deobfuscation used when no LLM is reachable.

use std::collections::{BTreeMap, BTreeSet};

use super::{AuxiliaryInfo, Provider};
use crate::perturb::{token_spans, Lexicons};

const HOW: &str = "Replace lookalike symbols with the letters they imitate, drop inserted symbols, \
                   collapse repeated letters, expand abbreviations and match the result against known words.";
const WHY: &str = "Evasive spellings keep a word readable to people while hiding it from filters, \
                   so restoring the spelling exposes the intended meaning.";
const MAX_CANDIDATES: usize = 256;

/// Frequent English words read as themselves.
const COMMON_WORDS: &[&str] = &[
    "a", "about", "act", "acting", "after", "again", "agrees", "all", "always", "am", "an", "and", "any",
    "are", "argue", "as", "at", "be", "been", "before", "believe", "best", "biggest", "but", "by", "called",
    "can", "cannot", "charge", "comes", "comment", "could", "day", "did", "do", "does", "done", "during",
    "energy", "every", "everyone", "ever", "for", "forum", "from", "full", "getting", "go", "good", "had",
    "has", "have", "he", "her", "here", "him", "his", "honestly", "how", "i", "if", "in", "is", "it", "its",
    "just", "kind", "knows", "know", "like", "listen", "lovely", "made", "make", "manager", "me", "meeting",
    "met", "more", "my", "neighbor", "never", "new", "no", "not", "now", "of", "old", "on", "one", "only",
    "or", "our", "out", "people", "photos", "posting", "proves", "real", "replied", "reply", "said", "see",
    "seriously", "she", "single", "so", "some", "sound", "stop", "such", "talk", "talks", "team", "tell",
    "than", "thanks", "that", "the", "their", "them", "then", "there", "these", "they", "this", "thread",
    "time", "to", "total", "turned", "types", "up", "us", "very", "was", "we", "were", "what", "when",
    "where", "which", "who", "why", "will", "with", "would", "write", "written", "yesterday", "you", "your",
];

/// Restores obfuscated tokens against a vocabulary of toxicity-relevant
/// words and reports the toxic ones as clues.
#[derive(Debug, Clone)]
pub struct StubDeobfuscator {
    vocabulary: BTreeSet<String>,
    toxic: BTreeSet<String>,
    reverse_glyphs: BTreeMap<char, Vec<char>>,
    reverse_abbr: BTreeMap<String, String>,
    special: BTreeSet<char>,
}

impl StubDeobfuscator {
    pub fn new(lexicons: &Lexicons) -> Self {
        let mut reverse_glyphs = lexicons.reverse_homoglyphs();
        for (&key, reps) in &lexicons.homoglyph_map {
            let entry = reverse_glyphs.entry(key).or_default();
            for &r in reps {
                if !entry.contains(&r) {
                    entry.push(r);
                }
            }
        }
        for alts in reverse_glyphs.values_mut() {
            let mut letters: Vec<char> = alts
                .iter()
                .flat_map(|c| c.to_lowercase())
                .filter(|c| c.is_ascii_lowercase())
                .collect();
            letters.sort_unstable();
            letters.dedup();
            *alts = letters;
        }
        let vocabulary = lexicons
            .toxic_relevant_words
            .iter()
            .chain(&lexicons.toxic_words)
            .cloned()
            .chain(COMMON_WORDS.iter().map(|w| w.to_string()))
            .collect();
        Self {
            vocabulary,
            toxic: lexicons.toxic_words.clone(),
            reverse_glyphs,
            reverse_abbr: lexicons.reverse_abbr(),
            special: lexicons.special_chars.iter().copied().collect(),
        }
    }

    /// Adds words that are read as themselves.
    pub fn extend_vocabulary<I: IntoIterator<Item = String>>(&mut self, words: I) {
        self.vocabulary.extend(words);
    }

    /// Restored reading of one token.
    pub fn restore_token(&self, token: &str) -> String {
        let lower: String = token.to_lowercase();
        let core = lower.trim_matches(|c: char| c.is_ascii_punctuation());
        if core.is_empty() {
            return lower;
        }
        if self.vocabulary.contains(core) {
            return core.to_string();
        }
        if let Some(phrase) = self.reverse_abbr.get(core).or_else(|| self.reverse_abbr.get(&lower)) {
            return phrase.clone();
        }
        let mut forms = Vec::new();
        for glyphs in self.glyph_candidates(&lower) {
            let stripped: String = glyphs.chars().filter(|c| c.is_alphanumeric()).collect();
            forms.push(collapse_repeats(&stripped, 2));
            forms.push(collapse_repeats(&stripped, 1));
            forms.push(stripped);
        }
        for form in &forms {
            if self.vocabulary.contains(form) {
                return form.clone();
            }
        }
        if let Some(hit) = self.wildcard_match(core) {
            return hit;
        }
        for form in &forms {
            if let Some(hit) = self.fuzzy_match(form) {
                return hit;
            }
        }
        if let Some(hit) = self.fuzzy_match(core) {
            return hit;
        }
        core.to_string()
    }

    /// Every combination of letter readings for non-letter characters.
    fn glyph_candidates(&self, token: &str) -> Vec<String> {
        let mut out = vec![String::new()];
        for c in token.chars() {
            let alts: Vec<char> = if c.is_ascii_lowercase() {
                vec![c]
            } else {
                match self.reverse_glyphs.get(&c) {
                    Some(a) if !a.is_empty() => a.clone(),
                    _ => vec![c],
                }
            };
            if out.len() * alts.len() > MAX_CANDIDATES {
                for s in &mut out {
                    s.push(alts[0]);
                }
                continue;
            }
            out = out
                .iter()
                .flat_map(|s| {
                    alts.iter().map(move |&a| {
                        let mut n = s.clone();
                        n.push(a);
                        n
                    })
                })
                .collect();
        }
        out
    }

    /// Treats special characters as single-letter wildcards.
    fn wildcard_match(&self, token: &str) -> Option<String> {
        let chars: Vec<char> = token.chars().collect();
        if !chars.iter().any(|c| self.special.contains(c)) || chars.iter().all(|c| self.special.contains(c)) {
            return None;
        }
        self.vocabulary
            .iter()
            .find(|w| {
                w.chars().count() == chars.len()
                    && w.chars().zip(&chars).all(|(a, &b)| a == b || self.special.contains(&b))
            })
            .cloned()
    }

    /// Nearest vocabulary word at edit distance one, for words of four or
    /// more letters.
    fn fuzzy_match(&self, form: &str) -> Option<String> {
        if form.chars().count() < 4 {
            return None;
        }
        self.vocabulary
            .iter()
            .filter(|w| w.chars().count() >= 4)
            .find(|w| damerau_levenshtein(form, w) <= 1)
            .cloned()
    }

    /// Auxiliary information for `text`.
    pub fn enrich(&self, text: &str) -> AuxiliaryInfo {
        let restored: Vec<String> = token_spans(text)
            .iter()
            .map(|&(s, e)| self.restore_token(&text[s..e]))
            .collect();
        let mut clues: Vec<&str> = Vec::new();
        for word in restored.iter().flat_map(|r| r.split_whitespace()) {
            if self.toxic.contains(word) && !clues.contains(&word) {
                clues.push(word);
            }
        }
        let meaning = restored.join(" ");
        let clue_text = if clues.is_empty() { "none".to_string() } else { clues.join(", ") };
        let what = format!("possible meaning: {meaning}. toxicity clues: {clue_text}");
        AuxiliaryInfo {
            raw_response: format!("HOW: {HOW}\nWHY: {WHY}\nWHAT: {what}"),
            how: HOW.to_string(),
            why: WHY.to_string(),
            what,
            provider: Provider::Stub,
        }
    }
}

/// Shortens runs of the same character to at most `max_run`.
fn collapse_repeats(s: &str, max_run: usize) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev = None;
    let mut run = 0;
    for c in s.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            run = 1;
            prev = Some(c);
        }
        if run <= max_run {
            out.push(c);
        }
    }
    out
}

/// Optimal-string-alignment edit distance (adjacent transpositions count 1).
pub(crate) fn damerau_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                d[i][j] = d[i][j].min(d[i - 2][j - 2] + 1);
            }
        }
    }
    d[n][m]
}
