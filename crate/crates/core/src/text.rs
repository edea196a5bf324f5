//! Shared text normalization helpers.

use std::collections::HashSet;
use std::sync::OnceLock;

const STOPWORDS_ASSET: &str = include_str!("../assets/stopwords.txt");

/// Collapse every run of whitespace to a single space and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Number of Unicode scalar values in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Lowercase word tokens with punctuation removed.
///
/// Apostrophes are dropped inside a word and a trailing possessive `'s` is
/// removed, so "Sarah's" and "Sarah" produce the same token.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for raw in text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’')) {
        if raw.is_empty() {
            continue;
        }
        let lower = raw.to_lowercase().replace('’', "'");
        let trimmed = lower.trim_matches('\'');
        let stem = trimmed.strip_suffix("'s").unwrap_or(trimmed);
        let token: String = stem.chars().filter(|c| *c != '\'').collect();
        if !token.is_empty() {
            tokens.push(token);
        }
    }
    tokens
}

/// The bundled stop-word set.
pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_ASSET
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Crude plural folding used when comparing content words.
pub fn fold_plural(token: &str) -> &str {
    if token.len() > 3 && token.ends_with('s') && !token.ends_with("ss") {
        &token[..token.len() - 1]
    } else {
        token
    }
}

/// Word tokens minus stop-words, plural-folded.
pub fn content_terms(text: &str) -> Vec<String> {
    word_tokens(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .map(|t| fold_plural(&t).to_string())
        .collect()
}

/// Lowercase, replace punctuation with spaces and collapse whitespace.
///
/// Used for answer-key matching.
pub fn normalize_for_match(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    normalize_whitespace(&lowered)
}

fn is_abbreviation(core: &str) -> bool {
    let mut chars = core.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => c.is_uppercase(),
        _ => core.contains('.'),
    }
}

/// Splits text into sentences, treating newlines as spaces and leaving
/// initials ("K.") and dotted abbreviations ("D.C.") intact.
pub fn sentences(text: &str) -> Vec<String> {
    let flat = normalize_whitespace(text);
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for word in flat.split(' ').filter(|w| !w.is_empty()) {
        current.push(word);
        let bare = word.trim_end_matches(['"', '\'', '”', '’', ')']);
        if let Some(stem) = bare.strip_suffix(['.', '!', '?']) {
            if !is_abbreviation(stem) {
                out.push(current.join(" "));
                current.clear();
            }
        }
    }
    if !current.is_empty() {
        out.push(current.join(" "));
    }
    out
}
