//! Generators and independent oracles shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::sync::Arc;

use memcue_core::ingest::{append, ChunkStager, ContextBuffer};
use memcue_core::session::{InteractionRecord, InteractionStatus};
use memcue_core::store::{assemble, Assembly, MemoryBlock, RankedHit, RetrievalConfig};
use memcue_core::{CategoryHint, EmbeddingVector, Mode, TranscriptEvent};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};

pub const WORDS: &[&str] = &[
    "a",
    "I",
    "to",
    "of",
    "Everton",
    "Wrexham",
    "Husky",
    "yoga",
    "teacher",
    "Cambridge",
    "lighthouse",
    "independent",
    "photographer",
    "xylophone-player",
    "pneumonoultramicroscopic",
    "é",
    "naïve",
    "東京",
    "42",
    "2019",
    "well,",
    "um",
    "it's",
    "O'Brien",
    "and...",
    "sunshine.",
];

/// Random utterance: one to eight words, random whitespace in between and
/// around, occasionally an overlong token.
pub fn random_utterance(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=8);
    let mut out = String::new();
    if rng.random_bool(0.2) {
        out.push_str(["  ", "\t", "\n "][rng.random_range(0..3)]);
    }
    for i in 0..n {
        if i > 0 {
            out.push_str([" ", "  ", "\t", " \n"][rng.random_range(0..4)]);
        }
        if rng.random_bool(0.03) {
            let len = rng.random_range(20..260);
            out.push_str(&"w".repeat(len));
        } else {
            out.push_str(WORDS.choose(rng).unwrap());
        }
    }
    if rng.random_bool(0.2) {
        out.push(' ');
    }
    out
}

/// Whitespace-collapsed form of the concatenated transcript, computed
/// without the library's text helpers.
pub fn normalized_transcript(utterances: &[String]) -> String {
    utterances
        .iter()
        .flat_map(|u| u.split_whitespace())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

pub struct IngestRun {
    pub max_context_chars: usize,
    pub violation: Option<String>,
}

/// Feeds `utterances` through a buffer of `alpha` chars and a stager with
/// `flush` threshold, checking after every event that the context fits and
/// that blocks + pending + context rebuild the transcript so far.
pub fn check_ingest_sequence(utterances: &[String], alpha: usize, flush: usize) -> IngestRun {
    let mut buffer = ContextBuffer::new(alpha).unwrap();
    let mut stager = ChunkStager::new(flush).unwrap();
    let mut blocks: Vec<(String, u64)> = Vec::new();
    let mut fed: Vec<String> = Vec::new();
    let mut max_context_chars = 0;
    for (i, u) in utterances.iter().enumerate() {
        let ts = i as u64 * 7 / 3;
        let Ok(event) = TranscriptEvent::new(u, ts, None) else {
            continue;
        };
        fed.push(u.clone());
        append(&mut buffer, &mut stager, &event);
        if let Some(b) = stager.flush(false) {
            blocks.push((b.text, b.timestamp));
        }
        let ctx_len = buffer.content().chars().count();
        max_context_chars = max_context_chars.max(ctx_len);
        if ctx_len > alpha {
            return IngestRun {
                max_context_chars,
                violation: Some(format!("context of {ctx_len} chars exceeds {alpha}")),
            };
        }
        let mut parts: Vec<&str> = blocks.iter().map(|(t, _)| t.as_str()).collect();
        parts.push(stager.pending());
        parts.push(buffer.content());
        let rebuilt = join_nonempty(&parts);
        let expected = normalized_transcript(&fed);
        if rebuilt != expected {
            return IngestRun {
                max_context_chars,
                violation: Some(format!("rebuilt {rebuilt:?} != {expected:?}")),
            };
        }
        if blocks.windows(2).any(|w| w[0].1 >= w[1].1) {
            return IngestRun {
                max_context_chars,
                violation: Some("block timestamps not strictly increasing".into()),
            };
        }
    }
    IngestRun {
        max_context_chars,
        violation: None,
    }
}

/// Uniformly random direction in `dim` dimensions.
pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        // Box-Muller from two uniforms per pair
        let mut v: Vec<f64> = Vec::with_capacity(dim);
        while v.len() < dim {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt();
            v.push(r * (std::f64::consts::TAU * u2).cos());
            v.push(r * (std::f64::consts::TAU * u2).sin());
        }
        v.truncate(dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

pub fn block(id: String, ts: u64, text: String, v: Vec<f32>) -> MemoryBlock {
    MemoryBlock {
        id,
        session_id: "s".into(),
        start_timestamp: ts,
        text,
        embedding: EmbeddingVector::new(v).unwrap(),
    }
}

/// Cosine as the store defines it: f64 accumulation, clamped, narrowed.
pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum();
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32
}

/// Full scan and full sort: similarity descending, then older start
/// timestamp, then smaller id; first `k` kept.
pub fn full_scan_top_k(blocks: &[MemoryBlock], query: &[f32], k: usize) -> Vec<(String, f32)> {
    let mut all: Vec<(f32, &MemoryBlock)> = blocks
        .iter()
        .map(|b| (oracle_cosine(query, b.embedding.values()), b))
        .collect();
    all.sort_by(|(sa, a), (sb, b)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then(a.start_timestamp.cmp(&b.start_timestamp))
            .then(a.id.cmp(&b.id))
    });
    all.into_iter().take(k).map(|(s, b)| (b.id.clone(), s)).collect()
}

pub fn chars_div_4(text: &str) -> usize {
    let n = text.chars().count();
    n / 4 + usize::from(n % 4 != 0)
}

/// Random similarity-ranked hit list with distinct timestamps.
pub fn random_hits(rng: &mut impl Rng) -> Vec<RankedHit> {
    let n = rng.random_range(0..=12);
    let mut ts: Vec<u64> = Vec::new();
    while ts.len() < n {
        let t = rng.random_range(0..10_000u64);
        if !ts.contains(&t) {
            ts.push(t);
        }
    }
    let mut sims: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
    (0..n)
        .map(|i| {
            let len = match rng.random_range(0..10) {
                0 => rng.random_range(8_000..20_000),
                1..=3 => rng.random_range(1_000..6_000),
                _ => rng.random_range(1..600),
            };
            let text = random_text(rng, len);
            let b = block(format!("b{i:03}"), ts[i], text, vec![1.0, 0.0]);
            RankedHit {
                block_id: b.id.clone(),
                similarity: sims[i],
                block: Arc::new(b),
            }
        })
        .collect()
}

pub fn random_text(rng: &mut impl Rng, chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    while s.chars().count() < chars {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(WORDS.choose(rng).unwrap());
    }
    s.chars().take(chars).collect::<String>().trim_end().to_string()
}

/// Checks the assembly contract for one hit list. Returns a description of
/// the first violation.
pub fn check_assembly(hits: &[RankedHit], cfg: &RetrievalConfig) -> Result<Assembly, String> {
    let a = assemble(hits, cfg);
    if chars_div_4(&a.text) > cfg.token_budget {
        return Err(format!(
            "{} tokens over budget {}",
            chars_div_4(&a.text),
            cfg.token_budget
        ));
    }
    if a.tokens != chars_div_4(&a.text) {
        return Err("reported token count disagrees with chars/4".into());
    }
    if hits.is_empty() {
        return if a.text.is_empty() && a.block_ids.is_empty() {
            Ok(a)
        } else {
            Err("non-empty assembly from no hits".into())
        };
    }
    let by_id = |id: &str| hits.iter().find(|h| h.block_id == id).unwrap();
    let stamps: Vec<u64> = a.block_ids.iter().map(|id| by_id(id).block.start_timestamp).collect();
    if stamps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("timestamps not strictly ascending: {stamps:?}"));
    }
    if a.truncated {
        if a.block_ids != [hits[0].block_id.clone()] || !hits[0].block.text.starts_with(&a.text) {
            return Err("truncation must cut the top hit".into());
        }
        return Ok(a);
    }
    let n = a.block_ids.len();
    let mut prefix: Vec<&str> = hits[..n].iter().map(|h| h.block_id.as_str()).collect();
    let mut got: Vec<&str> = a.block_ids.iter().map(String::as_str).collect();
    prefix.sort_unstable();
    got.sort_unstable();
    if prefix != got {
        return Err("survivors are not a similarity prefix".into());
    }
    // the prefix is maximal: one more hit would not fit
    if n < hits.len() {
        let mut texts: Vec<&str> = hits[..=n].iter().map(|h| h.block.text.as_str()).collect();
        texts.sort();
        if chars_div_4(&texts.join("\n")) <= cfg.token_budget {
            return Err(format!("prefix of {n} is not maximal"));
        }
    }
    let mut ordered: Vec<&RankedHit> = hits[..n].iter().collect();
    ordered.sort_by_key(|h| h.block.start_timestamp);
    let expected = ordered
        .iter()
        .map(|h| h.block.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    if expected != a.text {
        return Err("assembled text is not the timestamp-ordered join".into());
    }
    Ok(a)
}

pub fn random_record(rng: &mut impl RngCore, i: usize) -> InteractionRecord {
    let mode = *Mode::ALL.choose(rng).unwrap();
    let n_hits = rng.random_range(0..=10);
    let failed = rng.random_bool(0.1);
    let text = |rng: &mut dyn RngCore, n: usize| -> String {
        (0..n)
            .map(|_| *WORDS.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let n = rng.random_range(0..12);
    let concise = text(rng, n);
    let n_ctx = rng.random_range(0..20);
    InteractionRecord {
        interaction_id: format!("s-i{i:06}"),
        session_id: if rng.random_bool(0.5) {
            "s".into()
        } else {
            "other".into()
        },
        mode,
        voiced_query: mode.takes_query().then(|| text(rng, 5)),
        inferred_query: (!mode.takes_query()).then(|| text(rng, 4)),
        context_snapshot: text(rng, n_ctx),
        hit_ids: (0..n_hits).map(|h| format!("s-{h:06}")).collect(),
        hit_similarities: (0..n_hits).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect(),
        raw_answer: text(rng, 15),
        response_chars: concise.chars().count(),
        concise_answer: concise,
        query_time_ms: mode.takes_query().then(|| rng.random_range(0..20_000)),
        process_time_ms: rng.random_range(1..5_000),
        created_at: rng.random(),
        status: if failed {
            InteractionStatus::Failed
        } else {
            InteractionStatus::Ok
        },
        category_hint: (!failed).then(|| {
            if rng.random_bool(0.2) {
                CategoryHint::DontKnow
            } else {
                CategoryHint::Answered
            }
        }),
        error_class: failed.then(|| "backend_unavailable".to_string()),
        error: failed.then(|| "connection refused".to_string()),
    }
}

/// Random block with an arbitrary (not necessarily unit) embedding, so that
/// bit-exact round trips are exercised on awkward floats.
pub fn random_block(rng: &mut impl Rng, i: usize, dim: usize) -> MemoryBlock {
    let mut v: Vec<f32> = (0..dim)
        .map(|_| match rng.random_range(0..6) {
            0 => f32::from_bits(rng.random_range(0x0000_0001..0x0080_0000)), // subnormal
            1 => rng.random_range(-1e30f32..1e30),
            2 => 0.1,
            _ => rng.random_range(-1.0f32..1.0),
        })
        .collect();
    v[0] = 1.0 + rng.random::<f32>();
    let len = rng.random_range(1..400);
    block(
        format!("s-{i:06}"),
        i as u64 * 1_000 + rng.random_range(0..999),
        random_text(rng, len),
        v,
    )
}
