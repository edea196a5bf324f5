//! Python bindings: embedding, transcript parsing, sessions and corpus replay.
//!
//! Records and reports cross the boundary as plain dicts built from their
//! JSON form.

use std::path::PathBuf;
use std::sync::Arc;

use memcue_core::eval::{render_table, ReplayOptions};
use memcue_core::ingest::parse_transcript as parse_tsv;
use memcue_core::session::Services;
use memcue_core::{Config, Corpus, Embedder, InteractionLog, MemoryStore, Mode, Session, TranscriptEvent, WallClock};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (json,))
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "baseline" => Ok(Mode::Baseline),
        "query" => Ok(Mode::Query),
        "queryless" => Ok(Mode::Queryless),
        other => Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    }
}

fn config(toml: Option<&str>) -> PyResult<Config> {
    match toml {
        Some(t) => Config::from_toml_str(t).map_err(value_err),
        None => Ok(Config::default()),
    }
}

/// Embeds `text` with the default local embedder.
#[pyfunction]
fn embed(text: &str) -> PyResult<Vec<f32>> {
    let embedder = Config::default().embedder.build();
    Ok(embedder.embed(text).map_err(value_err)?.values().to_vec())
}

/// Parses `timestamp<TAB>speaker<TAB>text` lines into
/// `(timestamp, speaker, text)` tuples.
#[pyfunction]
fn parse_transcript(text: &str) -> PyResult<Vec<(u64, Option<String>, String)>> {
    Ok(parse_tsv(text)
        .map_err(value_err)?
        .into_iter()
        .map(|e| (e.timestamp, e.speaker, e.text))
        .collect())
}

/// Replays the bundled evaluation corpus with the extractive mock and
/// returns the metrics report as a dict.
#[pyfunction]
#[pyo3(signature = (modes=None))]
fn replay<'py>(py: Python<'py>, modes: Option<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
    let modes = match modes {
        Some(m) => m.iter().map(|s| parse_mode(s)).collect::<PyResult<Vec<_>>>()?,
        None => Mode::ALL.to_vec(),
    };
    let options = ReplayOptions::mock(Config::default().embedder.build());
    let report = py.detach(|| memcue_core::replay(&Corpus::bundled(), &modes, &options));
    to_py(py, &report)
}

/// Renders a report dict from `replay` as text tables.
#[pyfunction]
fn render_report(py: Python<'_>, report: Bound<'_, PyAny>) -> PyResult<String> {
    let json: String = py.import("json")?.call_method1("dumps", (report,))?.extract()?;
    let report = serde_json::from_str(&json).map_err(value_err)?;
    Ok(render_table(&report))
}

/// A memory store plus the services sessions run against.
#[pyclass(module = "memcue")]
struct Assistant {
    services: Services,
    config: Config,
}

#[pymethods]
impl Assistant {
    /// `config` is TOML text; `store` is a store file to load.
    #[new]
    #[pyo3(signature = (config=None, store=None))]
    fn new(config: Option<&str>, store: Option<PathBuf>) -> PyResult<Self> {
        let config = self::config(config)?;
        let embedder: Arc<dyn Embedder> = config.embedder.build();
        let store = match store {
            Some(p) => {
                let s = MemoryStore::load(&p).map_err(value_err)?;
                if s.dimension() != embedder.dimension() {
                    return Err(PyValueError::new_err(format!(
                        "store dimension {} does not match embedder dimension {}",
                        s.dimension(),
                        embedder.dimension()
                    )));
                }
                s
            }
            None => MemoryStore::new(embedder.dimension()),
        };
        let clock = Arc::new(WallClock::new());
        Ok(Self {
            services: Services {
                store: store.shared(),
                embedder,
                backend: config.backend.build(clock.clone()),
                clock,
                log: Arc::new(InteractionLog::in_memory()),
            },
            config,
        })
    }

    /// Opens a session whose blocks land in this assistant's store.
    fn session(&self, session_id: &str) -> PyResult<PySession> {
        let inner = Session::new(session_id, self.config.session, self.services.clone()).map_err(value_err)?;
        Ok(PySession { inner })
    }

    /// Number of stored memory blocks.
    fn __len__(&self) -> usize {
        self.services.store.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Stored blocks as `(id, start_timestamp, text)` tuples.
    fn blocks(&self) -> Vec<(String, u64, String)> {
        let store = self.services.store.read().unwrap_or_else(|e| e.into_inner());
        store
            .blocks()
            .iter()
            .map(|b| (b.id.clone(), b.start_timestamp, b.text.clone()))
            .collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let store = self.services.store.read().unwrap_or_else(|e| e.into_inner());
        store.persist(&path).map_err(runtime_err)
    }
}

#[pyclass(name = "Session", module = "memcue")]
struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn context(&self) -> String {
        self.inner.context()
    }

    /// Adds one utterance; returns `{evicted, new_block_ids, context}`.
    #[pyo3(signature = (text, timestamp, speaker=None))]
    fn ingest<'py>(
        &self,
        py: Python<'py>,
        text: &str,
        timestamp: u64,
        speaker: Option<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let event = TranscriptEvent::new(text, timestamp, speaker).map_err(value_err)?;
        let outcome = py.detach(|| self.inner.ingest(event)).map_err(value_err)?;
        to_py(py, &outcome)
    }

    /// Moves all buffered text into memory; returns the new block ids.
    fn flush(&self, py: Python<'_>) -> PyResult<Vec<String>> {
        py.detach(|| self.inner.flush_all()).map_err(value_err)
    }

    /// Runs one interaction and returns the record as a dict.
    #[pyo3(signature = (mode, query=None))]
    fn trigger<'py>(&self, py: Python<'py>, mode: &str, query: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let mode = parse_mode(mode)?;
        let record = py.detach(|| self.inner.trigger(mode, query, None)).map_err(value_err)?;
        to_py(py, &record)
    }

    fn close(&self, py: Python<'_>) -> PyResult<Vec<String>> {
        py.detach(|| self.inner.close()).map_err(value_err)
    }
}

#[pymodule]
fn memcue(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(parse_transcript, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    m.add_class::<Assistant>()?;
    m.add_class::<PySession>()?;
    Ok(())
}
