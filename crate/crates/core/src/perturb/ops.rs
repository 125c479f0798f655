use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Lexicons, PerturbConfig, PerturbError, PerturbationKind};

const TARGET_STREAM: u64 = 0;
const EDIT_STREAM: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Byte ranges of the whitespace-separated tokens of `text`.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Lowercase form of a token with surrounding punctuation stripped.
pub fn lookup_form(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Indices of toxicity-relevant tokens to perturb.
///
/// Samples `ceil(rate * eligible)` indices without replacement (at least one
/// when any token is eligible) and returns them in ascending order.
pub fn select_targets(tokens: &[&str], lexicons: &Lexicons, config: &PerturbConfig) -> Vec<usize> {
    let eligible: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| lexicons.toxic_relevant_words.contains(&lookup_form(t)))
        .map(|(i, _)| i)
        .collect();
    sample_targets(&eligible, config.rate, config.seed)
}

/// Samples `ceil(rate * len)` entries of `eligible` (at least one), ascending.
pub fn sample_targets(eligible: &[usize], rate: f64, seed: u64) -> Vec<usize> {
    if eligible.is_empty() {
        return Vec::new();
    }
    let count = ((rate * eligible.len() as f64).ceil() as usize).clamp(1, eligible.len());
    let mut rng = stream_rng(seed, TARGET_STREAM);
    let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Applies the configured operator, choosing targets from the lexicons.
pub fn apply(text: &str, config: &PerturbConfig, lexicons: &Lexicons) -> Result<String, PerturbError> {
    config.validate()?;
    lexicons.check_for(config.kind)?;
    match config.kind {
        PerturbationKind::Distract => {
            let mut rng = stream_rng(config.seed, EDIT_STREAM);
            let n = config.distract_len.max(1);
            let words: Vec<&str> = if lexicons.distract_words.len() >= n {
                lexicons
                    .distract_words
                    .choose_multiple(&mut rng, n)
                    .map(String::as_str)
                    .collect()
            } else {
                (0..n)
                    .map(|_| lexicons.distract_words[rng.gen_range(0..lexicons.distract_words.len())].as_str())
                    .collect()
            };
            Ok(format!("{} {}", words.join(" "), text))
        }
        PerturbationKind::Authorization => {
            let intro = authorize_prefix(lexicons, config.seed)?;
            Ok(format!("{intro} {text}"))
        }
        PerturbationKind::Abbreviation => {
            let spans = token_spans(text);
            let forms: Vec<String> = spans.iter().map(|&(s, e)| lookup_form(&text[s..e])).collect();
            let matches = phrase_matches(&forms, lexicons);
            let relevant: Vec<usize> = matches
                .iter()
                .filter(|(start, len)| {
                    forms[*start..*start + *len]
                        .iter()
                        .any(|w| lexicons.toxic_relevant_words.contains(w))
                })
                .map(|(start, _)| *start)
                .collect();
            let pool: Vec<usize> = if relevant.is_empty() {
                matches.iter().map(|(s, _)| *s).collect()
            } else {
                relevant
            };
            let targets = sample_targets(&pool, config.rate, config.seed);
            apply_at(text, &targets, config, lexicons)
        }
        _ => {
            let spans = token_spans(text);
            let tokens: Vec<&str> = spans.iter().map(|&(s, e)| &text[s..e]).collect();
            let targets = select_targets(&tokens, lexicons, config);
            apply_at(text, &targets, config, lexicons)
        }
    }
}

/// Applies a token-level operator to the given token indices.
///
/// Sentence-level kinds ignore `targets` and behave as [`apply`]. For
/// abbreviation, each index marks where a phrase replacement may start.
pub fn apply_at(
    text: &str,
    targets: &[usize],
    config: &PerturbConfig,
    lexicons: &Lexicons,
) -> Result<String, PerturbError> {
    config.validate()?;
    lexicons.check_for(config.kind)?;
    if !config.kind.is_token_level() {
        return apply(text, config, lexicons);
    }
    let spans = token_spans(text);
    let mut replacements: Vec<(usize, usize, String)> = Vec::new();
    let mut rng = stream_rng(config.seed, EDIT_STREAM);

    if config.kind == PerturbationKind::Abbreviation {
        let forms: Vec<String> = spans.iter().map(|&(s, e)| lookup_form(&text[s..e])).collect();
        let mut covered_until = 0;
        for &start in targets {
            if start >= spans.len() || start < covered_until {
                continue;
            }
            if let Some(len) = longest_phrase_at(&forms, start, lexicons) {
                let phrase = forms[start..start + len].join(" ");
                let short = &lexicons.abbr_map[&phrase];
                let (s0, e0) = spans[start];
                let (s1, e1) = spans[start + len - 1];
                let lead = leading_punct(&text[s0..e0]);
                let trail = trailing_punct(&text[s1..e1]);
                replacements.push((s0, e1, format!("{lead}{short}{trail}")));
                covered_until = start + len;
            }
        }
    } else {
        for &t in targets {
            let Some(&(s, e)) = spans.get(t) else { continue };
            let token = &text[s..e];
            let edited = edit_token(token, config, lexicons, &mut rng);
            if edited != token {
                replacements.push((s, e, edited));
            }
        }
    }

    let mut out = String::with_capacity(text.len() + 16);
    let mut cursor = 0;
    for (s, e, rep) in replacements {
        out.push_str(&text[cursor..s]);
        out.push_str(&rep);
        cursor = e;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

/// Samples one authority self-introduction, filling `{role}` from the role list.
pub fn authorize_prefix(lexicons: &Lexicons, seed: u64) -> Result<String, PerturbError> {
    if lexicons.authority_intros.is_empty() {
        return Err(PerturbError::EmptyLexicon("authority_intros"));
    }
    let mut rng = stream_rng(seed, EDIT_STREAM);
    let template = &lexicons.authority_intros[rng.gen_range(0..lexicons.authority_intros.len())];
    if template.contains("{role}") {
        let role = lexicons
            .roles
            .choose(&mut rng)
            .map(String::as_str)
            .unwrap_or("expert");
        Ok(template.replace("{role}", role))
    } else {
        Ok(template.clone())
    }
}

fn leading_punct(token: &str) -> &str {
    let core_start = token
        .char_indices()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, _)| i)
        .unwrap_or(token.len());
    &token[..core_start]
}

fn trailing_punct(token: &str) -> &str {
    let core_end = token
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    &token[core_end..]
}

fn max_phrase_words(lexicons: &Lexicons) -> usize {
    lexicons
        .abbr_map
        .keys()
        .map(|k| k.split(' ').count())
        .max()
        .unwrap_or(1)
}

fn longest_phrase_at(forms: &[String], start: usize, lexicons: &Lexicons) -> Option<usize> {
    let max = max_phrase_words(lexicons).min(forms.len() - start);
    (1..=max).rev().find(|&len| {
        let words = &forms[start..start + len];
        words.iter().all(|w| !w.is_empty()) && lexicons.abbr_map.contains_key(&words.join(" "))
    })
}

/// Greedy, left-to-right, longest-first non-overlapping phrase matches as
/// `(start, word_count)`.
fn phrase_matches(forms: &[String], lexicons: &Lexicons) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < forms.len() {
        if let Some(len) = longest_phrase_at(forms, i, lexicons) {
            out.push((i, len));
            i += len;
        } else {
            i += 1;
        }
    }
    out
}

fn edit_token(token: &str, config: &PerturbConfig, lexicons: &Lexicons, rng: &mut ChaCha8Rng) -> String {
    let lead = leading_punct(token);
    let trail = trailing_punct(token);
    if lead.len() + trail.len() >= token.len() {
        return token.to_string();
    }
    let core: Vec<char> = token[lead.len()..token.len() - trail.len()].chars().collect();
    let edits = config.edits_per_token.max(1);
    let edited = match config.kind {
        PerturbationKind::Insert => insert_chars(core, edits, &lexicons.special_chars, rng),
        PerturbationKind::Remove => remove_chars(core, edits, rng),
        PerturbationKind::Repeat => repeat_chars(core, edits, rng),
        PerturbationKind::Swap => swap_chars(core, edits, rng),
        PerturbationKind::Homoglyph => homoglyph_chars(core, edits, lexicons, rng),
        PerturbationKind::Maskword => mask_chars(core, edits, &lexicons.special_chars, rng),
        _ => core,
    };
    let mut out = String::with_capacity(token.len() + 4);
    out.push_str(lead);
    out.extend(edited);
    out.push_str(trail);
    out
}

fn insert_chars(mut core: Vec<char>, edits: usize, specials: &[char], rng: &mut ChaCha8Rng) -> Vec<char> {
    for _ in 0..edits {
        let pos = if core.len() >= 2 {
            rng.gen_range(1..core.len())
        } else {
            rng.gen_range(0..=core.len())
        };
        core.insert(pos, specials[rng.gen_range(0..specials.len())]);
    }
    core
}

fn remove_chars(mut core: Vec<char>, edits: usize, rng: &mut ChaCha8Rng) -> Vec<char> {
    if core.len() < 2 {
        return core;
    }
    let n = edits.min(core.len() - 1);
    let mut positions = index::sample(rng, core.len(), n).into_vec();
    positions.sort_unstable_by(|a, b| b.cmp(a));
    for p in positions {
        core.remove(p);
    }
    core
}

fn repeat_chars(mut core: Vec<char>, edits: usize, rng: &mut ChaCha8Rng) -> Vec<char> {
    for _ in 0..edits {
        let pos = rng.gen_range(0..core.len());
        core.insert(pos, core[pos]);
    }
    core
}

fn swap_chars(mut core: Vec<char>, edits: usize, rng: &mut ChaCha8Rng) -> Vec<char> {
    if core.len() < 2 {
        return core;
    }
    for _ in 0..edits {
        let differing: Vec<usize> = (0..core.len() - 1).filter(|&i| core[i] != core[i + 1]).collect();
        let interior: Vec<usize> = differing
            .iter()
            .copied()
            .filter(|&i| i >= 1 && i + 1 < core.len() - 1)
            .collect();
        let pool = if interior.is_empty() { differing } else { interior };
        let Some(&i) = pool.choose(rng) else { break };
        core.swap(i, i + 1);
    }
    core
}

fn homoglyph_chars(mut core: Vec<char>, edits: usize, lexicons: &Lexicons, rng: &mut ChaCha8Rng) -> Vec<char> {
    let mappable: Vec<usize> = (0..core.len())
        .filter(|&i| lexicons.homoglyph_map.contains_key(&core[i]))
        .collect();
    if mappable.is_empty() {
        return core;
    }
    let n = edits.min(mappable.len());
    for pick in index::sample(rng, mappable.len(), n) {
        let pos = mappable[pick];
        let choices = &lexicons.homoglyph_map[&core[pos]];
        core[pos] = choices[rng.gen_range(0..choices.len())];
    }
    core
}

fn mask_chars(mut core: Vec<char>, edits: usize, specials: &[char], rng: &mut ChaCha8Rng) -> Vec<char> {
    let positions: Vec<usize> = if core.len() >= 3 {
        (1..core.len()).collect()
    } else {
        (0..core.len()).collect()
    };
    let n = edits.min(positions.len());
    for pick in index::sample(rng, positions.len(), n) {
        core[positions[pick]] = specials[rng.gen_range(0..specials.len())];
    }
    core
}
