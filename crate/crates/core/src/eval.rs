//! Corpus replay and metrics.
//!
//! Each case gets a fresh store and session. The persona introduction is
//! ingested sentence by sentence and committed to memory, the case's context
//! for the mode under test becomes the live context, and the scripted
//! question (or nothing, for queryless) is triggered. Answers are labeled
//! against the case's answer keys and aggregated per mode.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ExtractiveMock, LanguageBackend};
use crate::clock::{Clock, SimulatedClock, WallClock};
use crate::embedding::Embedder;
use crate::ingest::TranscriptEvent;
use crate::retrieval::{is_dont_know, CategoryHint};
use crate::session::{InteractionLog, InteractionRecord, InteractionStatus, Mode, Services, Session, SessionConfig};
use crate::store::MemoryStore;
use crate::text::{char_len, is_stopword, normalize_for_match, sentences, word_tokens};

pub const REPORT_VERSION: u32 = 1;
/// Speaking rate used to synthesize query times, in characters per second.
pub const DEFAULT_SPEAKING_RATE: f64 = 15.0;
/// Per-call latency charged by the mock backend during replays.
pub const DEFAULT_MOCK_LATENCY_MS: u64 = 400;
/// Gap between ingested persona sentences.
const SENTENCE_GAP_MS: u64 = 2_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("missing asset {0}")]
    MissingAsset(PathBuf),
    #[error("invalid case{}: {reason}", index.map(|i| format!(" #{i}")).unwrap_or_default())]
    InvalidCase { index: Option<usize>, reason: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    General,
    Specific,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCase {
    pub persona: String,
    pub kind: CaseKind,
    pub question: String,
    pub expected_answer_keys: Vec<String>,
    #[serde(default)]
    pub mode_contexts: BTreeMap<Mode, String>,
    /// Marks a case whose query was garbled by speech recognition.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub transcription_error: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    /// Persona name to introduction text.
    pub personas: BTreeMap<String, String>,
    pub cases: Vec<CorpusCase>,
}

#[derive(Deserialize)]
struct CorpusFile {
    personas: Vec<PersonaEntry>,
    cases: Vec<CorpusCase>,
}

#[derive(Deserialize)]
struct PersonaEntry {
    name: String,
    introduction_file: String,
}

const BUNDLED_CORPUS: &str = include_str!("../assets/corpus/corpus.json");
const BUNDLED_PERSONAS: [(&str, &str); 4] = [
    (
        "personas/william.txt",
        include_str!("../assets/corpus/personas/william.txt"),
    ),
    (
        "personas/emily.txt",
        include_str!("../assets/corpus/personas/emily.txt"),
    ),
    (
        "personas/benjamin.txt",
        include_str!("../assets/corpus/personas/benjamin.txt"),
    ),
    (
        "personas/sarah.txt",
        include_str!("../assets/corpus/personas/sarah.txt"),
    ),
];

impl Corpus {
    /// The corpus compiled into the library.
    pub fn bundled() -> Corpus {
        parse_corpus(BUNDLED_CORPUS, |file| {
            BUNDLED_PERSONAS
                .iter()
                .find(|(name, _)| *name == file)
                .map(|(_, text)| text.to_string())
                .ok_or_else(|| EvalError::MissingAsset(PathBuf::from(file)))
        })
        .expect("bundled corpus is valid")
    }

    pub fn empty() -> Corpus {
        Corpus {
            personas: BTreeMap::new(),
            cases: Vec::new(),
        }
    }

    /// Stable identifier such as `sarah-specific-3`, numbered per persona and
    /// kind in file order.
    pub fn case_ids(&self) -> Vec<String> {
        let mut seen: BTreeMap<(String, CaseKind), usize> = BTreeMap::new();
        self.cases
            .iter()
            .map(|c| {
                let n = seen.entry((c.persona.clone(), c.kind)).or_insert(0);
                *n += 1;
                let kind = match c.kind {
                    CaseKind::General => "general",
                    CaseKind::Specific => "specific",
                };
                format!("{}-{kind}-{n}", c.persona.to_lowercase())
            })
            .collect()
    }
}

/// Loads a corpus file; persona introduction paths resolve relative to it.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, EvalError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(EvalError::MissingAsset(path.to_path_buf()));
    }
    let raw = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    parse_corpus(&raw, |file| {
        let p = base.join(file);
        std::fs::read_to_string(&p).map_err(|_| EvalError::MissingAsset(p))
    })
}

fn parse_corpus(raw: &str, read_persona: impl Fn(&str) -> Result<String, EvalError>) -> Result<Corpus, EvalError> {
    if raw.trim().is_empty() {
        return Err(EvalError::InvalidCase {
            index: None,
            reason: "corpus file is empty".into(),
        });
    }
    let file: CorpusFile = serde_json::from_str(raw).map_err(|e| EvalError::InvalidCase {
        index: None,
        reason: e.to_string(),
    })?;
    let mut personas = BTreeMap::new();
    for p in file.personas {
        let text = read_persona(&p.introduction_file)?;
        if text.trim().is_empty() {
            return Err(EvalError::InvalidCase {
                index: None,
                reason: format!("persona {} has an empty introduction", p.name),
            });
        }
        personas.insert(p.name, text);
    }
    for (i, case) in file.cases.iter().enumerate() {
        let invalid = |reason: String| EvalError::InvalidCase { index: Some(i), reason };
        let intro = personas
            .get(&case.persona)
            .ok_or_else(|| invalid(format!("unknown persona {:?}", case.persona)))?;
        if case.question.trim().is_empty() {
            return Err(invalid("question is empty".into()));
        }
        if case.kind == CaseKind::Specific && case.expected_answer_keys.is_empty() {
            return Err(invalid("specific question without answer keys".into()));
        }
        let intro_norm = normalize_for_match(intro);
        for key in &case.expected_answer_keys {
            let k = normalize_for_match(key);
            if k.is_empty() || !intro_norm.contains(&k) {
                return Err(invalid(format!(
                    "answer key {key:?} does not occur in the {} introduction",
                    case.persona
                )));
            }
        }
    }
    Ok(Corpus {
        personas,
        cases: file.cases,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Correct,
    DontKnow,
    Incorrect,
    TranscriptionError,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Correct,
        Category::DontKnow,
        Category::Incorrect,
        Category::TranscriptionError,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Correct => "Correct",
            Category::DontKnow => "Don't Know",
            Category::Incorrect => "Incorrect",
            Category::TranscriptionError => "Speech Recognition Error",
        }
    }
}

/// Correct if any key occurs in the answer (after lowercasing, stripping
/// punctuation and collapsing whitespace), otherwise DontKnow when the
/// pipeline flagged it, otherwise Incorrect.
pub fn label_response(answer: &str, keys: &[String], hint: CategoryHint) -> Category {
    let answer = normalize_for_match(answer);
    let matched = keys.iter().any(|k| {
        let k = normalize_for_match(k);
        !k.is_empty() && answer.contains(&k)
    });
    if matched {
        Category::Correct
    } else if hint == CategoryHint::DontKnow {
        Category::DontKnow
    } else {
        Category::Incorrect
    }
}

/// How the replay obtains its language backend.
#[derive(Clone)]
pub enum ReplayBackend {
    /// Extractive mock on a simulated clock charging `latency_ms` per call.
    /// Reports are byte-identical across runs.
    Mock { latency_ms: u64 },
    /// Any other backend, timed on the wall clock.
    Provided(Arc<dyn LanguageBackend>),
}

#[derive(Clone)]
pub struct ReplayOptions {
    pub session: SessionConfig,
    pub backend: ReplayBackend,
    pub embedder: Arc<dyn Embedder>,
    pub speaking_rate_chars_per_sec: f64,
}

impl ReplayOptions {
    pub fn mock(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            session: SessionConfig::default(),
            backend: ReplayBackend::Mock {
                latency_ms: DEFAULT_MOCK_LATENCY_MS,
            },
            embedder,
            speaking_rate_chars_per_sec: DEFAULT_SPEAKING_RATE,
        }
    }

    fn backend_label(&self) -> String {
        match &self.backend {
            ReplayBackend::Mock { .. } => "extractive_mock".into(),
            ReplayBackend::Provided(b) => b.kind().to_string(),
        }
    }
}

/// Synthetic time to voice `query` at `rate` characters per second.
pub fn speaking_time_ms(query: &str, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    (char_len(query) as f64 / rate * 1000.0).ceil() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub mode: Mode,
    pub persona: String,
    pub kind: CaseKind,
    pub query: Option<String>,
    pub inferred_query: Option<String>,
    pub context: String,
    pub answer: String,
    pub raw_answer: String,
    pub category: Category,
    pub retrieval_hit: bool,
    pub response_chars: usize,
    pub query_time_ms: Option<u64>,
    pub process_time_ms: u64,
    pub status: InteractionStatus,
    pub error_class: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for fewer than two values.
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Stat { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: Category,
    pub count: usize,
    /// Rounded to one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub interactions: usize,
    pub failed: usize,
    /// Cases skipped because they carry no context for this mode.
    pub skipped: usize,
    pub response_chars: Option<Stat>,
    pub query_time_ms: Option<Stat>,
    pub process_time_ms: Option<Stat>,
    pub categories: Vec<CategoryCount>,
    pub hit_rate: Option<f64>,
    pub specific_hit_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub backend: String,
    pub k: usize,
    pub token_budget: usize,
    pub context_chars: usize,
    pub flush_threshold_chars: usize,
    pub modes: Vec<ModeReport>,
    /// `1 - mean(query) / mean(baseline)` response length, in percent, when
    /// both modes were replayed.
    pub conciseness_reduction_pct: Option<f64>,
    /// Per-case contract violations found while replaying; empty when every
    /// trace was well formed.
    pub invariant_violations: Vec<String>,
    pub cases: Vec<CaseOutcome>,
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Replays every case of `corpus` in each of `modes`.
pub fn replay(corpus: &Corpus, modes: &[Mode], options: &ReplayOptions) -> MetricsReport {
    let ids = corpus.case_ids();
    let mut outcomes = Vec::new();
    let mut violations = Vec::new();
    let mut skipped: BTreeMap<Mode, usize> = BTreeMap::new();
    for &mode in modes {
        for (case, id) in corpus.cases.iter().zip(&ids) {
            match replay_case(corpus, case, id, mode, options, &mut violations) {
                Some(outcome) => outcomes.push(outcome),
                None => *skipped.entry(mode).or_insert(0) += 1,
            }
        }
    }
    let mode_reports: Vec<ModeReport> = modes
        .iter()
        .map(|&m| summarize(m, &outcomes, skipped.get(&m).copied().unwrap_or(0)))
        .collect();
    let mean_chars = |m: Mode| {
        mode_reports
            .iter()
            .find(|r| r.mode == m)
            .and_then(|r| r.response_chars)
            .map(|s| s.mean)
    };
    let conciseness_reduction_pct = match (mean_chars(Mode::Baseline), mean_chars(Mode::Query)) {
        (Some(b), Some(q)) if b > 0.0 => Some(round1((1.0 - q / b) * 100.0)),
        _ => None,
    };
    MetricsReport {
        version: REPORT_VERSION,
        backend: options.backend_label(),
        k: options.session.retrieval.k,
        token_budget: options.session.retrieval.token_budget,
        context_chars: options.session.context_chars,
        flush_threshold_chars: options.session.flush_threshold_chars,
        modes: mode_reports,
        conciseness_reduction_pct,
        invariant_violations: violations,
        cases: outcomes,
        notes: vec![
            "Speech Recognition Error is only assigned from case metadata; text input has no recognizer.".into(),
            "Process time ends at answer availability; there is no speech synthesis stage.".into(),
            "Query time is synthesized from question length at a fixed speaking rate.".into(),
        ],
    }
}

fn replay_case(
    corpus: &Corpus,
    case: &CorpusCase,
    case_id: &str,
    mode: Mode,
    options: &ReplayOptions,
    violations: &mut Vec<String>,
) -> Option<CaseOutcome> {
    let context = match mode {
        Mode::Queryless => case.mode_contexts.get(&Mode::Queryless)?.clone(),
        _ => case
            .mode_contexts
            .get(&mode)
            .or_else(|| case.mode_contexts.get(&Mode::Query))
            .cloned()
            .unwrap_or_default(),
    };
    let (clock, backend): (Arc<dyn Clock>, Arc<dyn LanguageBackend>) = match &options.backend {
        ReplayBackend::Mock { latency_ms } => {
            let clock: Arc<dyn Clock> = Arc::new(SimulatedClock::new(0));
            let mock = ExtractiveMock::new().with_latency(Duration::from_millis(*latency_ms), clock.clone());
            (clock, Arc::new(mock))
        }
        ReplayBackend::Provided(b) => (Arc::new(WallClock::new()), b.clone()),
    };
    let store = MemoryStore::new(options.embedder.dimension()).shared();
    let services = Services {
        store: store.clone(),
        embedder: options.embedder.clone(),
        backend,
        clock,
        log: Arc::new(InteractionLog::in_memory()),
    };
    let fail = |msg: String| -> Option<CaseOutcome> {
        Some(CaseOutcome {
            case_id: case_id.to_string(),
            mode,
            persona: case.persona.clone(),
            kind: case.kind,
            query: None,
            inferred_query: None,
            context: context.clone(),
            answer: String::new(),
            raw_answer: String::new(),
            category: Category::Incorrect,
            retrieval_hit: false,
            response_chars: 0,
            query_time_ms: None,
            process_time_ms: 0,
            status: InteractionStatus::Failed,
            error_class: Some(msg),
        })
    };
    let session = match Session::new(format!("{case_id}-{mode}"), options.session, services) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };

    let intro = corpus.personas.get(&case.persona)?;
    let mut ts = 0u64;
    for sentence in sentences(intro) {
        if let Err(e) = TranscriptEvent::new(&sentence, ts, None)
            .map_err(Into::into)
            .and_then(|ev| session.ingest(ev))
        {
            return fail(e.to_string());
        }
        ts += SENTENCE_GAP_MS;
    }
    if let Err(e) = session.flush_all() {
        return fail(e.to_string());
    }
    if !context.trim().is_empty() {
        if let Err(e) = TranscriptEvent::new(&context, ts, None)
            .map_err(Into::into)
            .and_then(|ev| session.ingest(ev))
        {
            return fail(e.to_string());
        }
    }

    let record = match mode {
        Mode::Queryless => session.trigger(mode, None, None),
        _ => session.trigger(
            mode,
            Some(&case.question),
            Some(speaking_time_ms(&case.question, options.speaking_rate_chars_per_sec)),
        ),
    };
    let record = match record {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };

    let guard = store.read().unwrap_or_else(|e| e.into_inner());
    let hit_texts: Vec<&str> = record
        .hit_ids
        .iter()
        .filter_map(|id| guard.get(id).map(|b| b.text.as_str()))
        .collect();
    let retrieval_hit = is_retrieval_hit(&hit_texts, &case.expected_answer_keys);
    let grounded_in = hit_texts.join("\n");
    check_record(
        &record,
        matches!(options.backend, ReplayBackend::Mock { .. }).then_some(grounded_in.as_str()),
        case_id,
        violations,
    );
    drop(guard);

    let category = if case.transcription_error {
        Category::TranscriptionError
    } else if record.status == InteractionStatus::Failed {
        Category::Incorrect
    } else {
        label_response(
            record.delivered_answer(),
            &case.expected_answer_keys,
            record.category_hint.unwrap_or(CategoryHint::Answered),
        )
    };
    Some(CaseOutcome {
        case_id: case_id.to_string(),
        mode,
        persona: case.persona.clone(),
        kind: case.kind,
        query: record.voiced_query.clone(),
        inferred_query: record.inferred_query.clone(),
        context: record.context_snapshot.clone(),
        answer: record.concise_answer.clone(),
        raw_answer: record.raw_answer.clone(),
        category,
        retrieval_hit,
        response_chars: record.response_chars,
        query_time_ms: record.query_time_ms,
        process_time_ms: record.process_time_ms,
        status: record.status,
        error_class: record.error_class.clone(),
    })
}

/// A case is a retrieval hit when any retrieved block contains any answer key.
pub fn is_retrieval_hit(hit_texts: &[&str], keys: &[String]) -> bool {
    hit_texts.iter().any(|t| {
        let t = normalize_for_match(t);
        keys.iter().any(|k| {
            let k = normalize_for_match(k);
            !k.is_empty() && t.contains(&k)
        })
    })
}

fn check_record(record: &InteractionRecord, grounding: Option<&str>, case_id: &str, out: &mut Vec<String>) {
    let tag = format!("{case_id}/{}", record.mode);
    if record.status == InteractionStatus::Failed {
        out.push(format!(
            "{tag}: pipeline failed ({})",
            record.error.as_deref().unwrap_or("?")
        ));
        return;
    }
    if char_len(&record.concise_answer) > char_len(&record.raw_answer) {
        out.push(format!("{tag}: concise answer longer than raw answer"));
    }
    if record.mode == Mode::Baseline && record.concise_answer != record.raw_answer {
        out.push(format!("{tag}: baseline answer was compressed"));
    }
    let hint_dk = record.category_hint == Some(CategoryHint::DontKnow);
    if hint_dk != is_dont_know(&record.raw_answer) {
        out.push(format!("{tag}: category hint disagrees with raw answer"));
    }
    let has_voiced = record.voiced_query.is_some();
    let has_inferred = record.inferred_query.as_deref().is_some_and(|q| q.ends_with('?'));
    if has_voiced == has_inferred || has_inferred != (record.mode == Mode::Queryless) {
        out.push(format!("{tag}: query fields do not match the mode"));
    }
    if record.hit_ids.is_empty() {
        out.push(format!("{tag}: no memories retrieved"));
    }
    if record.process_time_ms == 0 {
        out.push(format!("{tag}: zero process time"));
    }
    if let Some(evidence) = grounding {
        if !is_dont_know(&record.raw_answer) {
            let known: HashSet<String> = word_tokens(evidence).into_iter().collect();
            if let Some(w) = word_tokens(&record.raw_answer)
                .into_iter()
                .find(|w| !is_stopword(w) && !known.contains(w))
            {
                out.push(format!("{tag}: answer word {w:?} not found in retrieved memories"));
            }
        }
    }
}

fn summarize(mode: Mode, outcomes: &[CaseOutcome], skipped: usize) -> ModeReport {
    let mine: Vec<&CaseOutcome> = outcomes.iter().filter(|o| o.mode == mode).collect();
    let n = mine.len();
    let ok: Vec<&&CaseOutcome> = mine.iter().filter(|o| o.status == InteractionStatus::Ok).collect();
    let collect = |f: &dyn Fn(&CaseOutcome) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|o| f(o)).collect() };
    let categories = Category::ALL
        .iter()
        .map(|&c| {
            let count = mine.iter().filter(|o| o.category == c).count();
            CategoryCount {
                category: c,
                count,
                percent: if n == 0 {
                    0.0
                } else {
                    round1(count as f64 * 100.0 / n as f64)
                },
            }
        })
        .collect();
    let rate = |pred: &dyn Fn(&CaseOutcome) -> bool| -> Option<f64> {
        let sel: Vec<&&CaseOutcome> = mine.iter().filter(|o| pred(o)).collect();
        if sel.is_empty() {
            None
        } else {
            Some(sel.iter().filter(|o| o.retrieval_hit).count() as f64 / sel.len() as f64)
        }
    };
    ModeReport {
        mode,
        interactions: n,
        failed: n - ok.len(),
        skipped,
        response_chars: Stat::of(&collect(&|o| Some(o.response_chars as f64))),
        query_time_ms: Stat::of(&collect(&|o| o.query_time_ms.map(|v| v as f64))),
        process_time_ms: Stat::of(&collect(&|o| Some(o.process_time_ms as f64))),
        categories,
        hit_rate: rate(&|_| true),
        specific_hit_rate: rate(&|o| o.kind == CaseKind::Specific),
    }
}

fn fmt_stat(s: Option<Stat>, scale: f64, digits: usize) -> String {
    match s {
        Some(s) => format!("{:.*} ({:.*})", digits, s.mean / scale, digits, s.sd / scale),
        None => "-".into(),
    }
}

/// Aligned text rendering with one table for lengths and timings and one for
/// answer categories.
pub fn render_table(report: &MetricsReport) -> String {
    let mut rows: Vec<Vec<String>> = vec![vec![
        "Mode".into(),
        "N".into(),
        "Response length (chars)".into(),
        "Query time (s)".into(),
        "Process time (s)".into(),
    ]];
    for m in &report.modes {
        rows.push(vec![
            m.mode.to_string(),
            m.interactions.to_string(),
            fmt_stat(m.response_chars, 1.0, 1),
            fmt_stat(m.query_time_ms, 1000.0, 2),
            fmt_stat(m.process_time_ms, 1000.0, 3),
        ]);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Backend: {}  k={}  token budget={}",
        report.backend, report.k, report.token_budget
    );
    out.push('\n');
    out.push_str(&align(&rows));
    if let Some(r) = report.conciseness_reduction_pct {
        let _ = writeln!(out, "Response length reduction, query vs baseline: {r:.1}%");
    }
    out.push('\n');

    let mut header = vec!["Mode".to_string()];
    header.extend(Category::ALL.iter().map(|c| format!("{} (%)", c.label())));
    header.push("Hit-rate".into());
    header.push("Hit-rate specific".into());
    let mut rows = vec![header];
    for m in &report.modes {
        let mut row = vec![m.mode.to_string()];
        row.extend(m.categories.iter().map(|c| format!("{:.1} ({})", c.percent, c.count)));
        row.push(m.hit_rate.map(|h| format!("{h:.3}")).unwrap_or_else(|| "-".into()));
        row.push(
            m.specific_hit_rate
                .map(|h| format!("{h:.3}"))
                .unwrap_or_else(|| "-".into()),
        );
        rows.push(row);
    }
    out.push_str(&align(&rows));
    for (i, note) in report.notes.iter().enumerate() {
        let _ = writeln!(out, "[{}] {note}", i + 1);
    }
    if !report.invariant_violations.is_empty() {
        let _ = writeln!(out, "\n{} invariant violation(s):", report.invariant_violations.len());
        for v in &report.invariant_violations {
            let _ = writeln!(out, "  {v}");
        }
    }
    out
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| char_len(s))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
            out.push('\n');
        }
    }
    out
}
