//! Prompt templates for answering, answer compression and query inference.
//!
//! Template bodies live in `assets/prompts/` and are embedded at compile
//! time. Placeholders are written as `<External Memories>`, `<Current
//! Context>`, `<Query>` and `<Retrieved Answer>`. Substitution is a single
//! left-to-right pass, so bound values are never re-expanded even if they
//! contain placeholder text themselves.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    ContextualQuery,
    ConciseSuggestion,
    QuerylessInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    ExternalMemories,
    CurrentContext,
    Query,
    RetrievedAnswer,
}

impl Placeholder {
    pub const ALL: [Placeholder; 4] = [
        Placeholder::ExternalMemories,
        Placeholder::CurrentContext,
        Placeholder::Query,
        Placeholder::RetrievedAnswer,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Placeholder::ExternalMemories => "<External Memories>",
            Placeholder::CurrentContext => "<Current Context>",
            Placeholder::Query => "<Query>",
            Placeholder::RetrievedAnswer => "<Retrieved Answer>",
        }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no binding for placeholder {0}")]
    MissingBinding(Placeholder),
    #[error("template {template:?} has no placeholder {placeholder}")]
    UnknownPlaceholder {
        template: TemplateName,
        placeholder: Placeholder,
    },
}

pub type Bindings = BTreeMap<Placeholder, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: &'static str,
}

enum Piece {
    Literal(&'static str),
    Slot(Placeholder),
}

impl PromptTemplate {
    pub const CONTEXTUAL_QUERY: PromptTemplate = PromptTemplate {
        name: TemplateName::ContextualQuery,
        body: include_str!("../assets/prompts/contextual_query.txt"),
    };
    pub const CONCISE_SUGGESTION: PromptTemplate = PromptTemplate {
        name: TemplateName::ConciseSuggestion,
        body: include_str!("../assets/prompts/concise_suggestion.txt"),
    };
    pub const QUERYLESS_INFERENCE: PromptTemplate = PromptTemplate {
        name: TemplateName::QuerylessInference,
        body: include_str!("../assets/prompts/queryless_inference.txt"),
    };

    pub fn get(name: TemplateName) -> PromptTemplate {
        match name {
            TemplateName::ContextualQuery => Self::CONTEXTUAL_QUERY,
            TemplateName::ConciseSuggestion => Self::CONCISE_SUGGESTION,
            TemplateName::QuerylessInference => Self::QUERYLESS_INFERENCE,
        }
    }

    pub fn all() -> [PromptTemplate; 3] {
        [
            Self::CONTEXTUAL_QUERY,
            Self::CONCISE_SUGGESTION,
            Self::QUERYLESS_INFERENCE,
        ]
    }

    fn pieces(&self) -> Vec<Piece> {
        let mut pieces = Vec::new();
        let mut rest = self.body;
        loop {
            let next = Placeholder::ALL
                .iter()
                .filter_map(|p| rest.find(p.token()).map(|i| (i, *p)))
                .min_by_key(|(i, _)| *i);
            match next {
                Some((i, p)) => {
                    if i > 0 {
                        pieces.push(Piece::Literal(&rest[..i]));
                    }
                    pieces.push(Piece::Slot(p));
                    rest = &rest[i + p.token().len()..];
                }
                None => {
                    if !rest.is_empty() {
                        pieces.push(Piece::Literal(rest));
                    }
                    break;
                }
            }
        }
        pieces
    }

    /// Placeholders in order of appearance.
    pub fn placeholders(&self) -> Vec<Placeholder> {
        self.pieces()
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s),
                Piece::Literal(_) => None,
            })
            .collect()
    }

    pub fn build(&self, bindings: &Bindings) -> Result<String, PromptError> {
        let used = self.placeholders();
        if let Some(extra) = bindings.keys().find(|k| !used.contains(k)) {
            return Err(PromptError::UnknownPlaceholder {
                template: self.name,
                placeholder: *extra,
            });
        }
        let mut out = String::with_capacity(self.body.len() + bindings.values().map(String::len).sum::<usize>());
        for piece in self.pieces() {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(p) => out.push_str(bindings.get(&p).ok_or(PromptError::MissingBinding(p))?),
            }
        }
        Ok(out)
    }

    /// Recovers the bound values from a prompt produced by [`build`].
    ///
    /// Each literal segment is matched at its first occurrence after the
    /// previous one; the final segment must end the prompt.
    ///
    /// [`build`]: PromptTemplate::build
    pub fn parse(&self, prompt: &str) -> Option<Bindings> {
        let pieces = self.pieces();
        let mut bindings = Bindings::new();
        let mut cursor = 0usize;
        let mut open: Option<Placeholder> = None;
        for (i, piece) in pieces.iter().enumerate() {
            match piece {
                Piece::Slot(p) => open = Some(*p),
                Piece::Literal(lit) => {
                    let is_last = i == pieces.len() - 1;
                    let at = if open.is_none() {
                        prompt[cursor..].starts_with(lit).then_some(cursor)?
                    } else if is_last {
                        prompt
                            .ends_with(lit)
                            .then(|| prompt.len() - lit.len())
                            .filter(|&at| at >= cursor)?
                    } else {
                        cursor + prompt[cursor..].find(lit)?
                    };
                    if let Some(p) = open.take() {
                        bindings.insert(p, prompt[cursor..at].to_string());
                    }
                    cursor = at + lit.len();
                }
            }
        }
        if let Some(p) = open {
            bindings.insert(p, prompt[cursor..].to_string());
        } else if cursor != prompt.len() {
            return None;
        }
        Some(bindings)
    }
}

pub fn bindings<const N: usize>(pairs: [(Placeholder, &str); N]) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k, v.to_string())).collect()
}
