//! `memcue` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use lcg::Lcg;
use memcue_core::config::ConfigError;
use memcue_core::eval::{render_table, replay, EvalError, ReplayBackend, ReplayOptions, DEFAULT_MOCK_LATENCY_MS};
use memcue_core::ingest::{parse_transcript, IngestError};
use memcue_core::session::Services;
use memcue_core::text::sentences;
use memcue_core::{
    load_corpus, Config, Corpus, Embedder, ExtractiveMock, InteractionLog, MemoryBlock, MemoryStore, Mode, Session,
    SessionError, StoreError, TranscriptEvent, WallClock,
};
use thiserror::Error;

use crate::state::{AppState, StateError};

#[derive(Debug, Parser)]
#[command(name = "memcue", version, about = "Conversational memory assistant")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Query,
    Queryless,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Query => Mode::Query,
            ModeArg::Queryless => Mode::Queryless,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReplayModeArg {
    All,
    Baseline,
    Query,
    Queryless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    /// Extractive mock on a simulated clock; reports are reproducible.
    Mock,
    /// The backend from the configuration file, timed on the wall clock.
    Configured,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP/WebSocket service.
    Serve {
        /// Address to listen on; overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Answer one question against a stored memory.
    Ask {
        #[arg(long, value_enum, default_value = "query")]
        mode: ModeArg,
        /// The voiced question (baseline and query modes).
        #[arg(long)]
        query: Option<String>,
        /// Current conversation context.
        #[arg(long, conflicts_with = "context_file")]
        context: Option<String>,
        #[arg(long)]
        context_file: Option<PathBuf>,
        /// Memory store file.
        #[arg(long)]
        store: PathBuf,
        /// Print the full interaction record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Ingest a transcript file (`timestamp<TAB>speaker<TAB>text` lines)
    /// into a memory store, creating the store if needed.
    Ingest {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Session id used for block ids; defaults to the file stem.
        #[arg(long)]
        session: Option<String>,
    },
    /// Replay the evaluation corpus and print the metrics tables.
    Replay {
        /// Corpus file; the bundled corpus when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        mode: ReplayModeArg,
        #[arg(long, value_enum, default_value = "mock")]
        backend: BackendArg,
        /// Per-call latency charged by the mock.
        #[arg(long, default_value_t = DEFAULT_MOCK_LATENCY_MS)]
        mock_latency_ms: u64,
        /// Write the JSON report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Measure trigger-to-answer time against a large synthetic memory with
    /// the zero-latency mock.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        blocks: usize,
        #[arg(long, default_value_t = 300)]
        triggers: usize,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("memory store: {0}")]
    Store(#[from] StoreError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Transcript(#[from] IngestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

/// Runs every command except `serve`, writing human output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let stdout = |e: std::io::Error| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    match cli.command {
        Command::Serve { .. } => Err(CliError::Usage("serve runs through the async entry point".into())),
        Command::Ask {
            mode,
            query,
            context,
            context_file,
            store,
            json,
        } => {
            let context = match (context, context_file) {
                (Some(c), _) => c,
                (None, Some(f)) => read(&f)?,
                (None, None) => String::new(),
            };
            let record = ask(&config, mode.into(), query.as_deref(), &context, &store)?;
            if json {
                writeln!(
                    out,
                    "{}",
                    serde_json::to_string_pretty(&record).expect("records serialize")
                )
                .map_err(stdout)?;
            } else {
                if let Some(q) = &record.inferred_query {
                    writeln!(out, "inferred query: {q}").map_err(stdout)?;
                }
                match &record.error {
                    Some(e) => writeln!(
                        out,
                        "failed ({}): {e}",
                        record.error_class.as_deref().unwrap_or("error")
                    ),
                    None => writeln!(out, "{}", record.concise_answer),
                }
                .map_err(stdout)?;
            }
            Ok(())
        }
        Command::Ingest { file, store, session } => {
            let session_id = session.unwrap_or_else(|| {
                file.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "transcript".into())
            });
            let summary = ingest_file(&config, &file, &store, &session_id)?;
            writeln!(
                out,
                "{} events from {}: {} new blocks, store now holds {}",
                summary.events,
                file.display(),
                summary.new_blocks,
                summary.total_blocks
            )
            .map_err(stdout)?;
            Ok(())
        }
        Command::Replay {
            corpus,
            mode,
            backend,
            mock_latency_ms,
            output,
        } => {
            let corpus = match corpus {
                Some(p) => load_corpus(p)?,
                None => Corpus::bundled(),
            };
            let modes: Vec<Mode> = match mode {
                ReplayModeArg::All => Mode::ALL.to_vec(),
                ReplayModeArg::Baseline => vec![Mode::Baseline],
                ReplayModeArg::Query => vec![Mode::Query],
                ReplayModeArg::Queryless => vec![Mode::Queryless],
            };
            let options = ReplayOptions {
                session: config.session,
                backend: match backend {
                    BackendArg::Mock => ReplayBackend::Mock {
                        latency_ms: mock_latency_ms,
                    },
                    BackendArg::Configured => ReplayBackend::Provided(config.backend.build(Arc::new(WallClock::new()))),
                },
                embedder: config.embedder.build(),
                speaking_rate_chars_per_sec: memcue_core::eval::DEFAULT_SPEAKING_RATE,
            };
            let report = replay(&corpus, &modes, &options);
            if let Some(path) = output {
                std::fs::write(&path, report.to_json()).map_err(io_err(&path))?;
            }
            write!(out, "{}", render_table(&report)).map_err(stdout)?;
            Ok(())
        }
        Command::Bench { blocks, triggers } => {
            let report = bench(&config, blocks, triggers)?;
            writeln!(
                out,
                "{} blocks, {} triggers: p50 {:.2} ms, p95 {:.2} ms, max {:.2} ms",
                report.blocks,
                report.triggers,
                ms(report.p50),
                ms(report.p95),
                ms(report.max)
            )
            .map_err(stdout)?;
            Ok(())
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn open_store(path: &Path, embedder: &dyn Embedder) -> Result<MemoryStore, CliError> {
    if !path.exists() {
        return Ok(MemoryStore::new(embedder.dimension()));
    }
    let store = MemoryStore::load(path)?;
    if store.dimension() != embedder.dimension() {
        return Err(StateError::DimensionMismatch {
            path: path.to_path_buf(),
            store: store.dimension(),
            embedder: embedder.dimension(),
        }
        .into());
    }
    Ok(store)
}

fn services(config: &Config, store: MemoryStore, embedder: Arc<dyn Embedder>) -> Result<Services, CliError> {
    let clock: Arc<WallClock> = Arc::new(WallClock::new());
    let log = match &config.server.log_path {
        Some(p) => InteractionLog::open(p).map_err(StateError::from)?,
        None => InteractionLog::in_memory(),
    };
    Ok(Services {
        store: store.shared(),
        embedder,
        backend: config.backend.build(clock.clone()),
        clock,
        log: Arc::new(log),
    })
}

/// One-shot interaction against a stored memory. The context is live
/// conversation only; it is not written back to the store.
pub fn ask(
    config: &Config,
    mode: Mode,
    query: Option<&str>,
    context: &str,
    store_path: &Path,
) -> Result<memcue_core::InteractionRecord, CliError> {
    if !store_path.exists() {
        return Err(CliError::Usage(format!(
            "store {} does not exist",
            store_path.display()
        )));
    }
    let embedder = config.embedder.build();
    let store = open_store(store_path, embedder.as_ref())?;
    let mut session_config = config.session;
    // the whole context file is the live context
    session_config.context_chars = session_config.context_chars.max(context.chars().count()).max(1);
    let session = Session::new("ask", session_config, services(config, store, embedder)?)?;
    if !context.trim().is_empty() {
        session.ingest(TranscriptEvent::new(context, 0, None)?)?;
    }
    Ok(session.trigger(mode, query, None)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub events: usize,
    pub new_blocks: usize,
    pub total_blocks: usize,
}

pub fn ingest_file(
    config: &Config,
    file: &Path,
    store_path: &Path,
    session_id: &str,
) -> Result<IngestSummary, CliError> {
    let events = parse_transcript(&read(file)?)?;
    let embedder = config.embedder.build();
    let store = open_store(store_path, embedder.as_ref())?;
    let prefix = format!("{session_id}-");
    if store.ids().any(|id| id.starts_with(&prefix)) {
        return Err(CliError::Usage(format!(
            "store already holds blocks of session {session_id:?}; pass a different --session"
        )));
    }
    let services = services(config, store, embedder)?;
    let shared = services.store.clone();
    let session = Session::new(session_id, config.session, services)?;
    let mut new_blocks = 0;
    for event in &events {
        new_blocks += session.ingest(event.clone())?.new_block_ids.len();
    }
    new_blocks += session.close()?.len();
    let store = shared.read().unwrap_or_else(|e| e.into_inner());
    store.persist(store_path)?;
    Ok(IngestSummary {
        events: events.len(),
        new_blocks,
        total_blocks: store.len(),
    })
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub blocks: usize,
    pub triggers: usize,
    pub p50: Duration,
    pub p95: Duration,
    pub max: Duration,
}

/// Fills a store with `blocks` synthetic blocks drawn from the bundled
/// persona sentences and times `triggers` interactions, cycling through the
/// three modes.
pub fn bench(config: &Config, blocks: usize, triggers: usize) -> Result<BenchReport, CliError> {
    if triggers == 0 {
        return Err(CliError::Usage("--triggers must be positive".into()));
    }
    let embedder = config.embedder.build();
    let corpus = Corpus::bundled();
    let pool: Vec<String> = corpus.personas.values().flat_map(|t| sentences(t)).collect();
    let questions: Vec<&str> = corpus.cases.iter().map(|c| c.question.as_str()).collect();
    let mut rng = Lcg::new(7);
    let mut store = MemoryStore::new(embedder.dimension());
    for i in 0..blocks {
        let text = (0..3)
            .map(|_| pool[rng.below(pool.len())].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let embedding = embedder.embed(&text).map_err(SessionError::from)?;
        store.insert(MemoryBlock {
            id: format!("bench-pre-{i:06}"),
            session_id: "bench-pre".into(),
            start_timestamp: i as u64 * 1_000,
            text,
            embedding,
        })?;
    }
    let clock = Arc::new(WallClock::new());
    let services = Services {
        store: store.shared(),
        embedder,
        backend: Arc::new(ExtractiveMock::new()),
        clock,
        log: Arc::new(InteractionLog::in_memory()),
    };
    let session = Session::new("bench", config.session, services)?;
    let mut times = Vec::with_capacity(triggers);
    for i in 0..triggers {
        let context = &pool[rng.below(pool.len())];
        session.ingest(TranscriptEvent::new(context, i as u64 * 1_000, None)?)?;
        let mode = Mode::ALL[i % 3];
        let query = mode.takes_query().then(|| questions[rng.below(questions.len())]);
        let started = Instant::now();
        session.trigger(mode, query, None)?;
        times.push(started.elapsed());
    }
    times.sort();
    Ok(BenchReport {
        blocks,
        triggers,
        p50: times[times.len() / 2],
        p95: times[(times.len() * 95 / 100).min(times.len() - 1)],
        max: *times.last().expect("at least one trigger"),
    })
}

/// Builds the server state for `serve`.
pub fn serve_state(config: &Config) -> Result<AppState, CliError> {
    Ok(AppState::from_config(config)?)
}

mod lcg {
    /// Small deterministic generator for synthetic benchmark data.
    pub struct Lcg(u64);

    impl Lcg {
        pub fn new(seed: u64) -> Self {
            Self(seed)
        }

        pub fn below(&mut self, n: usize) -> usize {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 33) as usize) % n.max(1)
        }
    }
}
