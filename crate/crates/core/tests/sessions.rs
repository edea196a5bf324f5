use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use memcue_core::backend::{BackendError, BackendKind, GenerationRequest, GenerationResult};
use memcue_core::session::{InteractionStatus, Services};
use memcue_core::text::sentences;
use memcue_core::{
    Corpus, EmbedError, Embedder, EmbeddingVector, ExtractiveMock, HashedEmbedder, InteractionLog, LanguageBackend,
    MemoryStore, Mode, Session, SessionConfig, SessionError, SimulatedClock, TranscriptEvent,
};

fn services_with(backend: Arc<dyn LanguageBackend>, embedder: Arc<dyn Embedder>) -> (Services, Arc<SimulatedClock>) {
    let clock = Arc::new(SimulatedClock::new(1_700_000_000_000));
    (
        Services {
            store: MemoryStore::new(embedder.dimension()).shared(),
            embedder,
            backend,
            clock: clock.clone(),
            log: Arc::new(InteractionLog::in_memory()),
        },
        clock,
    )
}

fn services() -> (Services, Arc<SimulatedClock>) {
    services_with(Arc::new(ExtractiveMock::new()), Arc::new(HashedEmbedder::default()))
}

fn ev(text: &str, ts: u64) -> TranscriptEvent {
    TranscriptEvent::new(text, ts, None).unwrap()
}

#[test]
fn william_introduction_fills_memory() {
    let (svc, _) = services();
    let store = svc.store.clone();
    let s = Session::new("w", SessionConfig::default(), svc).unwrap();
    let intro = &Corpus::bundled().personas["William"];
    for (i, sent) in sentences(intro).iter().enumerate() {
        s.ingest(ev(sent, i as u64 * 2_000)).unwrap();
    }
    let before_flush = store.read().unwrap().len();
    s.flush_all().unwrap();
    let store = store.read().unwrap();
    assert!(before_flush >= 5, "{before_flush}");
    assert_eq!(store.len(), 6);
    let ids: Vec<&str> = store.ids().collect();
    assert_eq!(ids[0], "w-000000");
    let blocks = store.blocks();
    assert!(blocks.windows(2).all(|w| w[0].start_timestamp < w[1].start_timestamp));
    // nothing lost: the blocks rebuild the introduction
    let rebuilt = blocks.iter().map(|b| b.text.as_str()).collect::<Vec<_>>().join(" ");
    assert_eq!(rebuilt, intro.split_whitespace().collect::<Vec<_>>().join(" "));
}

#[test]
fn hold_to_talk_uses_press_time_context() {
    let (svc, clock) = services();
    let s = Session::new("h", SessionConfig::default(), svc).unwrap();
    s.ingest(ev("My friend Sarah has a dog named Luna.", 0)).unwrap();
    let t = s.start_trigger(Mode::Query).unwrap();
    s.ingest(ev(
        "Unrelated chatter that arrives while the button is held down for a while.",
        500,
    ))
    .unwrap();
    clock.advance(Duration::from_millis(1_250));
    let r = s.end_trigger(&t, "What is the dog called?").unwrap();
    assert_eq!(r.query_time_ms, Some(1_250));
    assert_eq!(r.context_snapshot, "My friend Sarah has a dog named Luna.");
    assert!(matches!(
        s.end_trigger(&t, "again?"),
        Err(SessionError::UnknownTrigger(_))
    ));
    assert!(matches!(
        s.start_trigger(Mode::Queryless),
        Err(SessionError::ModeArgMismatch { .. })
    ));
}

#[test]
fn interactions_are_listed_per_mode() {
    let (svc, _) = services();
    let s = Session::new("l", SessionConfig::default(), svc).unwrap();
    s.ingest(ev("We talked about hiking and camping trips in the hills.", 0))
        .unwrap();
    s.trigger(Mode::Query, Some("Where did they camp?"), Some(900)).unwrap();
    s.trigger(Mode::Queryless, None, Some(900)).unwrap();
    let q = s.list_interactions(Some(Mode::Query));
    assert_eq!(q.len(), 1);
    assert_eq!(q[0].query_time_ms, Some(900));
    let ql = s.list_interactions(Some(Mode::Queryless));
    assert_eq!(ql[0].query_time_ms, None);
    assert_eq!(ql[0].interaction_id, "l-i000001");
    assert_eq!(s.list_interactions(None).len(), 2);
}

#[derive(Debug)]
struct Down;
impl LanguageBackend for Down {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }
    fn generate(&self, _: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        Err(BackendError::RemoteUnavailable {
            retryable: true,
            message: "connection refused".into(),
        })
    }
}

#[test]
fn backend_failure_is_logged_as_failed_interaction() {
    let (svc, _) = services_with(Arc::new(Down), Arc::new(HashedEmbedder::default()));
    let log = svc.log.clone();
    let s = Session::new("f", SessionConfig::default(), svc).unwrap();
    s.ingest(ev("some words", 0)).unwrap();
    let r = s.trigger(Mode::Query, Some("what?"), None).unwrap();
    assert_eq!(r.status, InteractionStatus::Failed);
    assert_eq!(r.error_class.as_deref(), Some("backend_unavailable"));
    assert_eq!(r.concise_answer, "");
    assert_eq!(log.len(), 1);
}

struct Flaky {
    down: AtomicBool,
    inner: HashedEmbedder,
}
impl Embedder for Flaky {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if self.down.load(Ordering::SeqCst) {
            Err(EmbedError::RemoteUnavailable {
                retryable: true,
                message: "down".into(),
            })
        } else {
            self.inner.embed(text)
        }
    }
}

#[test]
fn blocks_survive_an_embedder_outage() {
    let flaky = Arc::new(Flaky {
        down: AtomicBool::new(true),
        inner: HashedEmbedder::default(),
    });
    let (svc, _) = services_with(Arc::new(ExtractiveMock::new()), flaky.clone());
    let store = svc.store.clone();
    let cfg = SessionConfig {
        context_chars: 10,
        flush_threshold_chars: 10,
        ..SessionConfig::default()
    };
    let s = Session::new("e", cfg, svc).unwrap();
    assert!(matches!(
        s.ingest(ev("the first words spoken today", 0)),
        Err(SessionError::Embed(_))
    ));
    assert!(store.read().unwrap().is_empty());
    flaky.down.store(false, Ordering::SeqCst);
    let out = s.ingest(ev("and then some more", 10)).unwrap();
    assert_eq!(out.new_block_ids, ["e-000000", "e-000001"]);
    s.flush_all().unwrap();
    let text = store
        .read()
        .unwrap()
        .blocks()
        .iter()
        .map(|b| b.text.clone())
        .collect::<Vec<_>>()
        .join(" ");
    assert_eq!(text, "the first words spoken today and then some more");
}

#[test]
fn closed_session_flushes_and_rejects() {
    let (svc, _) = services();
    let store = svc.store.clone();
    let s = Session::new("c", SessionConfig::default(), svc).unwrap();
    s.ingest(ev("short", 0)).unwrap();
    assert_eq!(s.close().unwrap(), ["c-000000"]);
    assert_eq!(store.read().unwrap().len(), 1);
    assert!(matches!(s.ingest(ev("more", 1)), Err(SessionError::SessionClosed)));
    assert!(matches!(
        s.trigger(Mode::Queryless, None, None),
        Err(SessionError::SessionClosed)
    ));
}

#[test]
fn sessions_share_one_store_across_threads() {
    let (svc, _) = services();
    let store = svc.store.clone();
    let handles: Vec<_> = (0..4)
        .map(|n| {
            let svc = svc.clone();
            std::thread::spawn(move || {
                let s = Session::new(format!("t{n}"), SessionConfig::default(), svc).unwrap();
                for i in 0..50 {
                    s.ingest(ev(&format!("thread {n} says sentence number {i} out loud"), i))
                        .unwrap();
                    if i % 10 == 0 {
                        s.trigger(Mode::Query, Some("what number?"), None).unwrap();
                    }
                }
                s.close().unwrap();
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let store = store.read().unwrap();
    for n in 0..4 {
        let prefix = format!("t{n}-");
        assert!(store.ids().filter(|id| id.starts_with(&prefix)).count() > 0);
    }
    assert_eq!(svc.log.len(), 20);
}
