//! Queryless answering: infer the question the user is about to ask from
//! the current context, then answer it like an explicit query.

use serde::{Deserialize, Serialize};

use crate::backend::{GenerationRequest, LanguageBackend};
use crate::prompt::{bindings, Placeholder, PromptTemplate};
use crate::retrieval::{answer_query, AgentError, AnswerTrace, Pipeline};
use crate::text::normalize_whitespace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferredQuery {
    /// Always ends with `?`.
    pub text: String,
    pub source_context: String,
    pub latency_ms: u64,
}

/// Cleans up a model reply into a single question: first non-empty line,
/// without a leading `Query:` label or wrapping quotes, ending in `?`.
pub fn normalize_inferred(reply: &str) -> Option<String> {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line
        .strip_prefix("Query:")
        .or_else(|| line.strip_prefix("query:"))
        .unwrap_or(line);
    let line = normalize_whitespace(line.trim().trim_matches(['"', '\'', '“', '”']));
    let line = line.trim_end_matches(['.', '!', ' ']);
    if !line.chars().any(char::is_alphanumeric) {
        return None;
    }
    if line.ends_with('?') {
        Some(line.to_string())
    } else {
        Some(format!("{line}?"))
    }
}

pub fn infer_query(context: &str, backend: &dyn LanguageBackend) -> Result<InferredQuery, AgentError> {
    let context = normalize_whitespace(context);
    if context.is_empty() {
        return Err(AgentError::EmptyContext);
    }
    let prompt = PromptTemplate::QUERYLESS_INFERENCE.build(&bindings([(Placeholder::CurrentContext, &context)]))?;
    let out = backend.generate(&GenerationRequest::new(prompt))?;
    let text = normalize_inferred(&out.text).ok_or(AgentError::EmptyInference)?;
    Ok(InferredQuery {
        text,
        source_context: context,
        latency_ms: out.latency_ms,
    })
}

/// Infers a query and answers it concisely. Retrieval embeds the inferred
/// query followed by the context, exactly as for an explicit query.
pub fn queryless_answer(context: &str, pipeline: &Pipeline<'_>) -> Result<(InferredQuery, AnswerTrace), AgentError> {
    let inferred = infer_query(context, pipeline.backend)?;
    let mut trace = answer_query(&inferred.text, &inferred.source_context, pipeline, true)?;
    trace.inferred = true;
    trace.backend_latency_ms += inferred.latency_ms;
    Ok((inferred, trace))
}
