//! Lexicon tables backing the perturbation operators.
//!
//! Tables are plain UTF-8 files so larger external resources can be dropped
//! in without code changes:
//!
//! | file                       | format                                   |
//! |----------------------------|------------------------------------------|
//! | `homoglyphs.tsv`           | `char<TAB>repl repl ...`                 |
//! | `abbr.tsv`                 | `phrase<TAB>abbreviation`                |
//! | `special_chars.txt`        | one character per line                   |
//! | `distract_words.txt`       | one word per line                        |
//! | `authority_intros.txt`     | one template per line, `{role}` optional |
//! | `roles.txt`                | one role per line                        |
//! | `toxic_relevant_words.txt` | one word per line                        |
//! | `toxic_words.txt`          | one word per line                        |

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{PerturbError, PerturbationKind};

const HOMOGLYPHS: &str = include_str!("../../data/lexicons/homoglyphs.tsv");
const ABBR: &str = include_str!("../../data/lexicons/abbr.tsv");
const SPECIAL: &str = include_str!("../../data/lexicons/special_chars.txt");
const DISTRACT: &str = include_str!("../../data/lexicons/distract_words.txt");
const INTROS: &str = include_str!("../../data/lexicons/authority_intros.txt");
const ROLES: &str = include_str!("../../data/lexicons/roles.txt");
const RELEVANT: &str = include_str!("../../data/lexicons/toxic_relevant_words.txt");
const TOXIC: &str = include_str!("../../data/lexicons/toxic_words.txt");

/// Immutable lookup tables shared by every operator.
#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    pub homoglyph_map: BTreeMap<char, Vec<char>>,
    /// Lowercase phrase (one or more words) to abbreviation or slang.
    pub abbr_map: BTreeMap<String, String>,
    pub special_chars: Vec<char>,
    pub distract_words: Vec<String>,
    pub authority_intros: Vec<String>,
    pub roles: Vec<String>,
    /// Words eligible for word- and character-level perturbation.
    pub toxic_relevant_words: BTreeSet<String>,
    /// Known toxic terms; used by the offline enrichment stub to report clues.
    pub toxic_words: BTreeSet<String>,
}

impl Lexicons {
    /// The desk-scale tables shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_sources(
            HOMOGLYPHS, ABBR, SPECIAL, DISTRACT, INTROS, ROLES, RELEVANT, TOXIC,
        )
        .expect("shipped lexicons are well formed")
    }

    /// Loads every table from `dir`; missing files fall back to the shipped table.
    pub fn load_dir(dir: &Path) -> Result<Self, PerturbError> {
        let read = |name: &str, fallback: &'static str| -> Result<String, PerturbError> {
            let path = dir.join(name);
            if path.exists() {
                fs::read_to_string(&path).map_err(|source| PerturbError::Io {
                    path: path.display().to_string(),
                    source,
                })
            } else {
                Ok(fallback.to_string())
            }
        };
        Self::from_sources(
            &read("homoglyphs.tsv", HOMOGLYPHS)?,
            &read("abbr.tsv", ABBR)?,
            &read("special_chars.txt", SPECIAL)?,
            &read("distract_words.txt", DISTRACT)?,
            &read("authority_intros.txt", INTROS)?,
            &read("roles.txt", ROLES)?,
            &read("toxic_relevant_words.txt", RELEVANT)?,
            &read("toxic_words.txt", TOXIC)?,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn from_sources(
        homoglyphs: &str,
        abbr: &str,
        special: &str,
        distract: &str,
        intros: &str,
        roles: &str,
        relevant: &str,
        toxic: &str,
    ) -> Result<Self, PerturbError> {
        let mut homoglyph_map = BTreeMap::new();
        for (lineno, line) in data_lines(homoglyphs) {
            let (key, reps) = line.split_once('\t').ok_or(PerturbError::Malformed {
                table: "homoglyphs.tsv",
                line: lineno,
            })?;
            let mut chars = key.chars();
            let key = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(PerturbError::Malformed {
                        table: "homoglyphs.tsv",
                        line: lineno,
                    })
                }
            };
            let mut values: Vec<char> = Vec::new();
            for rep in reps.split_whitespace() {
                let mut it = rep.chars();
                if let (Some(c), None) = (it.next(), it.next()) {
                    if c != key && !values.contains(&c) {
                        values.push(c);
                    }
                }
            }
            if !values.is_empty() {
                homoglyph_map.insert(key, values);
            }
        }

        let mut abbr_map = BTreeMap::new();
        for (lineno, line) in data_lines(abbr) {
            let (phrase, short) = line.split_once('\t').ok_or(PerturbError::Malformed {
                table: "abbr.tsv",
                line: lineno,
            })?;
            let phrase = phrase.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            let short = short.trim();
            if !phrase.is_empty() && !short.is_empty() {
                abbr_map.entry(phrase).or_insert_with(|| short.to_string());
            }
        }

        let mut special_chars = Vec::new();
        for (_, line) in data_lines(special) {
            for c in line.chars().filter(|c| !c.is_whitespace()) {
                if !special_chars.contains(&c) {
                    special_chars.push(c);
                }
            }
        }

        let words = |src: &str| -> Vec<String> {
            data_lines(src).map(|(_, l)| l.trim().to_string()).collect()
        };
        let lower_set = |src: &str| -> BTreeSet<String> {
            data_lines(src).map(|(_, l)| l.trim().to_lowercase()).collect()
        };

        Ok(Self {
            homoglyph_map,
            abbr_map,
            special_chars,
            distract_words: words(distract),
            authority_intros: words(intros),
            roles: words(roles),
            toxic_relevant_words: lower_set(relevant),
            toxic_words: lower_set(toxic),
        })
    }

    /// Checks that the tables an operator draws from are populated.
    pub fn check_for(&self, kind: PerturbationKind) -> Result<(), PerturbError> {
        use PerturbationKind::*;
        let empty = |name: &'static str, is_empty: bool| {
            if is_empty {
                Err(PerturbError::EmptyLexicon(name))
            } else {
                Ok(())
            }
        };
        match kind {
            Insert | Maskword => empty("special_chars", self.special_chars.is_empty()),
            Homoglyph => empty("homoglyph_map", self.homoglyph_map.is_empty()),
            Abbreviation => empty("abbr_map", self.abbr_map.is_empty()),
            Distract => empty("distract_words", self.distract_words.is_empty()),
            Authorization => empty("authority_intros", self.authority_intros.is_empty()),
            Remove | Repeat | Swap => Ok(()),
        }
    }

    /// Inverse homoglyph table: lookalike character to the characters it imitates.
    pub fn reverse_homoglyphs(&self) -> BTreeMap<char, Vec<char>> {
        let mut rev: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for (&key, reps) in &self.homoglyph_map {
            for &r in reps {
                let entry = rev.entry(r).or_default();
                if !entry.contains(&key) {
                    entry.push(key);
                }
            }
        }
        rev
    }

    /// Inverse abbreviation table keyed by lowercase abbreviation.
    pub fn reverse_abbr(&self) -> BTreeMap<String, String> {
        let mut rev = BTreeMap::new();
        for (phrase, short) in &self.abbr_map {
            rev.entry(short.to_lowercase()).or_insert_with(|| phrase.clone());
        }
        rev
    }

    pub fn is_special(&self, c: char) -> bool {
        self.special_chars.contains(&c)
    }
}

fn data_lines(src: &str) -> impl Iterator<Item = (usize, &str)> {
    src.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches(['\r', '\n'])))
        .filter(|(_, l)| !l.trim().is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_tables_meet_desk_scale_sizes() {
        let lex = Lexicons::builtin();
        assert!(lex.homoglyph_map.len() >= 200);
        assert!(lex.abbr_map.len() >= 500);
        assert!(lex.authority_intros.len() >= 50);
        assert!(lex.distract_words.len() >= 200);
        assert_eq!(lex.special_chars.len(), 32);
        assert!(!lex.toxic_relevant_words.is_empty());
    }

    #[test]
    fn homoglyph_values_never_contain_key() {
        let lex = Lexicons::builtin();
        for (k, v) in &lex.homoglyph_map {
            assert!(!v.contains(k), "{k} maps to itself");
        }
    }

    #[test]
    fn abbr_keys_are_lowercase() {
        let lex = Lexicons::builtin();
        for k in lex.abbr_map.keys() {
            assert_eq!(k, &k.to_lowercase());
        }
        assert_eq!(lex.abbr_map.get("bite me").map(String::as_str), Some("BTM"));
    }

    #[test]
    fn malformed_homoglyph_line_is_reported() {
        let err = Lexicons::from_sources("ab\tx\n", "", "", "", "", "", "", "").unwrap_err();
        assert!(matches!(err, PerturbError::Malformed { line: 1, .. }));
    }

    #[test]
    fn load_dir_overrides_single_table() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("distract_words.txt"), "alpha\nbeta\n").unwrap();
        let lex = Lexicons::load_dir(dir.path()).unwrap();
        assert_eq!(lex.distract_words, vec!["alpha", "beta"]);
        assert!(lex.abbr_map.len() >= 500);
    }
}
