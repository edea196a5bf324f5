//! Deterministic extractive stand-in for a language model.
//!
//! The mock recognizes the three prompt layouts and answers each one with a
//! small rule-based procedure:
//!
//! - answering: pick the memory sentence with the largest content-word
//!   overlap (query words count double, context words once) and return it
//!   verbatim, or [`UNKNOWN_ANSWER`] when nothing overlaps;
//! - compression: drop stop-words and every word already present in the
//!   query or context, split the remainder at connectives and punctuation,
//!   and join the pieces with ", ";
//! - query inference: read the trailing clause of the context and turn its
//!   dangling ending ("and", "called", "is", ...) into a wh-question.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use super::{BackendError, BackendKind, GenerationRequest, GenerationResult, LanguageBackend};
use crate::clock::{ceil_ms, Clock, WallClock};
use crate::prompt::{Placeholder, PromptTemplate, TemplateName};
use crate::retrieval::is_dont_know;
use crate::store::Tokenizer;
use crate::text::{fold_plural, is_stopword, normalize_whitespace, sentences, word_tokens};

/// Literal the mock returns when no memory sentence matches.
pub const UNKNOWN_ANSWER: &str = "Unknown";

const CONNECTIVES: &[&str] = &["and", "or", "but", "nor", "then", "also", "so", "yet"];

const DANGLING: &[&str] = &[
    "and",
    "or",
    "but",
    "the",
    "a",
    "an",
    "like",
    "include",
    "includes",
    "including",
    "is",
    "are",
    "was",
    "were",
    "called",
    "named",
    "at",
    "of",
    "in",
    "from",
    "as",
    "to",
    "use",
    "uses",
    "with",
    "for",
    "by",
    "on",
    "his",
    "her",
    "their",
    "my",
    "its",
    "then",
    "also",
    "takes",
    "take",
    "be",
    "being",
    "he",
    "she",
    "they",
    "it",
    "such",
];

#[derive(Debug, Clone)]
pub struct ExtractiveMock {
    latency: Duration,
    clock: Arc<dyn Clock>,
    prompt_token_limit: Option<usize>,
}

impl Default for ExtractiveMock {
    fn default() -> Self {
        Self::new()
    }
}

impl ExtractiveMock {
    pub fn new() -> Self {
        Self {
            latency: Duration::ZERO,
            clock: Arc::new(WallClock::new()),
            prompt_token_limit: None,
        }
    }

    /// Spend `latency` on `clock` for every call.
    pub fn with_latency(mut self, latency: Duration, clock: Arc<dyn Clock>) -> Self {
        self.latency = latency;
        self.clock = clock;
        self
    }

    pub fn with_prompt_token_limit(mut self, limit: usize) -> Self {
        self.prompt_token_limit = Some(limit);
        self
    }

    fn respond(&self, prompt: &str) -> Result<String, BackendError> {
        for template in PromptTemplate::all() {
            let Some(b) = template.parse(prompt) else {
                continue;
            };
            let get = |p: Placeholder| b.get(&p).map(String::as_str).unwrap_or("");
            return Ok(match template.name {
                TemplateName::ContextualQuery => answer_from_memories(
                    get(Placeholder::ExternalMemories),
                    get(Placeholder::CurrentContext),
                    get(Placeholder::Query),
                ),
                TemplateName::ConciseSuggestion => compress(
                    get(Placeholder::CurrentContext),
                    get(Placeholder::Query),
                    get(Placeholder::RetrievedAnswer),
                ),
                TemplateName::QuerylessInference => infer_query(get(Placeholder::CurrentContext)),
            });
        }
        Err(BackendError::MalformedPrompt)
    }
}

impl LanguageBackend for ExtractiveMock {
    fn kind(&self) -> BackendKind {
        BackendKind::ExtractiveMock
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        if let Some(limit) = self.prompt_token_limit {
            let tokens = Tokenizer::CharsDiv4.count(&request.prompt);
            if tokens > limit {
                return Err(BackendError::PromptTooLarge { tokens, limit });
            }
        }
        let started = self.clock.now();
        let text = self.respond(&request.prompt)?;
        let text = clip_words(&text, request.max_output_tokens);
        self.clock.pause(self.latency);
        Ok(GenerationResult {
            text,
            latency_ms: ceil_ms(self.clock.now().saturating_sub(started)),
            backend_used: BackendKind::ExtractiveMock,
        })
    }
}

fn clip_words(text: &str, max_tokens: usize) -> String {
    if Tokenizer::CharsDiv4.count(text) <= max_tokens {
        return text.to_string();
    }
    let mut out = String::new();
    for word in text.split_whitespace() {
        let candidate = if out.is_empty() {
            word.to_string()
        } else {
            format!("{out} {word}")
        };
        if Tokenizer::CharsDiv4.count(&candidate) > max_tokens {
            break;
        }
        out = candidate;
    }
    out
}

fn folded_terms(text: &str) -> HashSet<String> {
    word_tokens(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .map(|t| fold_plural(&t).to_string())
        .collect()
}

pub(crate) fn answer_from_memories(memories: &str, context: &str, query: &str) -> String {
    let query_terms = folded_terms(query);
    let context_terms: HashSet<String> = folded_terms(context)
        .into_iter()
        .filter(|t| !query_terms.contains(t))
        .collect();
    let mut best: Option<(usize, String)> = None;
    for sentence in sentences(memories) {
        let terms = folded_terms(&sentence);
        let score = 2 * terms.intersection(&query_terms).count() + terms.intersection(&context_terms).count();
        if score > 0 && best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, sentence));
        }
    }
    best.map(|(_, s)| s).unwrap_or_else(|| UNKNOWN_ANSWER.to_string())
}

struct Word<'a> {
    core: &'a str,
    boundary_after: bool,
    keep: bool,
    stop_only: bool,
    connective: bool,
    capitalized: bool,
}

pub(crate) fn compress(context: &str, query: &str, answer: &str) -> String {
    let answer = answer.trim();
    if is_dont_know(answer) {
        return answer.to_string();
    }
    let mut known = folded_terms(query);
    known.extend(folded_terms(context));

    let mut words: Vec<Word> = answer
        .split_whitespace()
        .map(|raw| {
            let core = raw.trim_matches(|c: char| !c.is_alphanumeric());
            let tail_start = raw
                .char_indices()
                .rfind(|(_, c)| c.is_alphanumeric())
                .map(|(i, c)| i + c.len_utf8())
                .unwrap_or(0);
            let tail = &raw[tail_start..];
            let tokens = word_tokens(core);
            let stop_only = !tokens.is_empty() && tokens.iter().all(|t| is_stopword(t));
            let keep = tokens
                .iter()
                .any(|t| !is_stopword(t) && !known.contains(fold_plural(t)));
            Word {
                core,
                boundary_after: core.is_empty() || tail.contains([',', ';', ':', '.', '!', '?']),
                keep,
                stop_only,
                connective: CONNECTIVES.contains(&core.to_lowercase().as_str()),
                capitalized: core.chars().next().is_some_and(char::is_uppercase),
            }
        })
        .collect();

    // keep short stop-word bridges inside proper names ("Ticket to Ride")
    let content_or_kept: Vec<bool> = words.iter().map(|w| !w.stop_only || w.keep).collect();
    let kept: Vec<bool> = words.iter().map(|w| w.keep).collect();
    for i in 0..words.len() {
        if kept[i] || !words[i].stop_only || words[i].connective {
            continue;
        }
        let Some(prev) = (0..i).rev().find(|&j| content_or_kept[j]) else {
            continue;
        };
        let Some(next) = (i + 1..words.len()).find(|&j| content_or_kept[j]) else {
            continue;
        };
        let bridge_ok = next - prev - 1 <= 2
            && kept[prev]
            && words[prev].capitalized
            && kept[next]
            && words[next].capitalized
            && (prev..next).all(|j| !words[j].boundary_after && !words[j].connective);
        if bridge_ok {
            words[i].keep = true;
        }
    }

    let mut groups: Vec<Vec<(usize, &str)>> = Vec::new();
    let mut current: Vec<(usize, &str)> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if w.keep {
            current.push((i, w.core));
        } else if w.connective && !current.is_empty() {
            groups.push(std::mem::take(&mut current));
        }
        if w.boundary_after && !current.is_empty() {
            groups.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        groups.push(current);
    }

    // A named answer usually follows the last word that echoes the query;
    // when something capitalized or numeric comes after that echo, keep only
    // that tail.
    let query_terms = folded_terms(query);
    let last_echo = words.iter().rposition(|w| {
        word_tokens(w.core)
            .iter()
            .any(|t| !is_stopword(t) && query_terms.contains(fold_plural(t)))
    });
    if let Some(echo) = last_echo {
        let named_tail = groups
            .iter()
            .flatten()
            .any(|(i, w)| *i > echo && w.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit()));
        if named_tail {
            for g in &mut groups {
                g.retain(|(i, _)| *i > echo);
            }
            groups.retain(|g| !g.is_empty());
        }
    }

    groups
        .iter()
        .map(|g| g.iter().map(|(_, w)| *w).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(", ")
}

fn strip_punct(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

fn lower_first_if_stopword(words: &[&str]) -> String {
    let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    if let Some(first) = out.first_mut() {
        if is_stopword(&strip_punct(first).to_lowercase()) {
            *first = first.to_lowercase();
        }
    }
    out.join(" ")
}

fn clean(mut ws: Vec<&str>) -> Vec<&str> {
    if let Some(last) = ws.last_mut() {
        *last = last.trim_end_matches(|c: char| !c.is_alphanumeric());
    }
    ws.into_iter().filter(|w| !w.is_empty()).collect()
}

pub(crate) fn infer_query(context: &str) -> String {
    let flat = normalize_whitespace(context);
    let flat = flat.trim_end_matches(['.', '…', ' ']).to_string();
    let trailing_comma = flat.ends_with(',');
    let clause = sentences(&flat)
        .into_iter()
        .rev()
        .find(|s| s.chars().any(char::is_alphanumeric))
        .unwrap_or_default();
    let clause = clause.trim_end_matches(|c: char| !c.is_alphanumeric());
    let mut words: Vec<&str> = clause.split_whitespace().collect();

    let mut popped: Vec<String> = Vec::new();
    while let Some(last) = words.last() {
        let bare = strip_punct(last).to_lowercase();
        if bare.is_empty() || DANGLING.contains(&bare.as_str()) {
            popped.push(bare);
            words.pop();
        } else {
            break;
        }
    }
    let has = |w: &str| popped.iter().any(|p| p == w);

    let tail_from = |limit: usize| -> Vec<&str> {
        let start = words.len().saturating_sub(limit);
        words[start..].to_vec()
    };
    let after_last_comma = |limit: usize| -> Vec<&str> {
        let start = words
            .iter()
            .rposition(|w| w.ends_with(','))
            .map(|i| i + 1)
            .filter(|&i| i < words.len())
            .unwrap_or(0);
        let seg = &words[start..];
        seg[seg.len().saturating_sub(limit)..].to_vec()
    };

    if words.is_empty() {
        return "What is it?".to_string();
    }
    if has("called") || has("named") {
        let mut head = clean(after_last_comma(4));
        while head.len() > 1 && is_stopword(&strip_punct(head[0]).to_lowercase()) {
            head.remove(0);
        }
        return format!("What is the name of the {}?", head.join(" "));
    }
    if let Some(verb) = ["is", "are", "was", "were"].iter().find(|v| has(v)) {
        let tail = clean(after_last_comma(8));
        return format!("What {verb} {}?", lower_first_if_stopword(&tail));
    }
    let enumeration = trailing_comma
        || ["and", "or", "like", "include", "includes", "including", "such"]
            .iter()
            .any(|w| has(w));
    let tail = clean(tail_from(10));
    if enumeration {
        format!("What are the other items after {}?", lower_first_if_stopword(&tail))
    } else {
        format!("What completes {}?", lower_first_if_stopword(&tail))
    }
}
