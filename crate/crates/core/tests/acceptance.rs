//! Acceptance runner: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use memcue_core::eval::{replay, Corpus, ReplayOptions};
use memcue_core::prompt::{bindings, Placeholder, PromptTemplate};
use memcue_core::session::Services;
use memcue_core::store::{MemoryStore, RetrievalConfig};
use memcue_core::text::sentences;
use memcue_core::{
    compress_answer, Embedder, EmbeddingVector, ExtractiveMock, HashedEmbedder, InteractionLog, Mode, Session,
    SessionConfig, TranscriptEvent, WallClock,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("buffer invariants", buffer_invariants),
        ("kNN oracle equivalence", knn_oracle),
        ("assembly contract", assembly_contract),
        ("prompt golden files", prompt_goldens),
        ("conciseness", conciseness),
        ("end-to-end corpus replay", corpus_replay),
        ("desk-scale latency", desk_latency),
        ("persistence round trips", persistence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    if started.elapsed() < limit {
        Ok(())
    } else {
        Err(format!(
            "took {:.1}s, limit {}s",
            started.elapsed().as_secs_f64(),
            limit.as_secs()
        ))
    }
}

fn buffer_invariants() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0FF);
    let mut sequences = 0;
    for alpha in [10, 75, 200] {
        for _ in 0..1_000 {
            let n = rng.random_range(1..80);
            let utterances: Vec<String> = (0..n).map(|_| random_utterance(&mut rng)).collect();
            let flush = *[1, 40, 300].choose(&mut rng).unwrap();
            let run = check_ingest_sequence(&utterances, alpha, flush);
            if let Some(v) = run.violation {
                return Err(format!("alpha={alpha}: {v}"));
            }
            sequences += 1;
        }
    }
    within(started, Duration::from_secs(10))?;
    Ok(format!(
        "{sequences} sequences over alpha 10/75/200, context bounded, transcript rebuilt losslessly"
    ))
}

fn knn_oracle() -> Outcome {
    let started = Instant::now();
    let dim = 384;
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E4E);
    let mut checks = 0;
    for n in [10, 100, 1_000, 10_000] {
        let mut store = MemoryStore::new(dim);
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            // a few exact duplicates exercise the documented tie-break
            let v = if i % 97 == 5 && i > 0 {
                blocks
                    .last()
                    .map(|b: &memcue_core::MemoryBlock| b.embedding.values().to_vec())
                    .unwrap()
            } else {
                random_unit(&mut rng, dim)
            };
            let b = block(format!("b{i:05}"), rng.random_range(0..5_000), format!("block {i}"), v);
            store.insert(b.clone()).map_err(|e| e.to_string())?;
            blocks.push(b);
        }
        for _ in 0..10 {
            let q = if rng.random_bool(0.3) {
                blocks.choose(&mut rng).unwrap().embedding.values().to_vec()
            } else {
                random_unit(&mut rng, dim)
            };
            let query = EmbeddingVector::new(q.clone()).map_err(|e| e.to_string())?;
            for k in [1, 5, 10] {
                let cfg = RetrievalConfig {
                    k,
                    ..RetrievalConfig::default()
                };
                let got: Vec<(String, f32)> = store
                    .search(&query, &cfg)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|h| (h.block_id, h.similarity))
                    .collect();
                let want = full_scan_top_k(&blocks, &q, k);
                if got != want {
                    return Err(format!("n={n} k={k}: {got:?} != {want:?}"));
                }
                checks += 1;
            }
        }
    }
    within(started, Duration::from_secs(30))?;
    Ok(format!(
        "{checks} searches over 10/100/1k/10k blocks equal the full-scan oracle"
    ))
}

fn assembly_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA55E);
    let mut max_tokens = 0;
    for i in 0..3_000 {
        let hits = random_hits(&mut rng);
        let budget = if i % 3 == 0 { rng.random_range(1..600) } else { 4096 };
        let cfg = RetrievalConfig {
            token_budget: budget,
            ..RetrievalConfig::default()
        };
        let a = check_assembly(&hits, &cfg).map_err(|e| format!("case {i}: {e}"))?;
        if budget == 4096 {
            max_tokens = max_tokens.max(a.tokens);
        }
    }
    Ok(format!(
        "3000 hit sets; largest default assembly {max_tokens} of 4096 tokens"
    ))
}

fn prompt_goldens() -> Outcome {
    let goldens = [
        (
            PromptTemplate::CONTEXTUAL_QUERY,
            bindings([
                (Placeholder::ExternalMemories, "MEMORIES-1\nMEMORIES-2"),
                (Placeholder::CurrentContext, "CONTEXT"),
                (Placeholder::Query, "QUERY?"),
            ]),
            include_str!("data/prompts/contextual_query.golden"),
        ),
        (
            PromptTemplate::CONCISE_SUGGESTION,
            bindings([
                (Placeholder::CurrentContext, "CONTEXT"),
                (Placeholder::Query, "QUERY?"),
                (Placeholder::RetrievedAnswer, "ANSWER."),
            ]),
            include_str!("data/prompts/concise_suggestion.golden"),
        ),
        (
            PromptTemplate::QUERYLESS_INFERENCE,
            bindings([(Placeholder::CurrentContext, "CONTEXT")]),
            include_str!("data/prompts/queryless_inference.golden"),
        ),
    ];
    for (t, b, golden) in goldens {
        let built = t.build(&b).map_err(|e| e.to_string())?;
        if built != golden {
            return Err(format!("{:?} differs from its golden", t.name));
        }
    }
    Ok("3 templates byte-identical".into())
}

fn conciseness() -> Outcome {
    let mock = ExtractiveMock::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0C0);
    for i in 0..2_000 {
        let words = |rng: &mut ChaCha8Rng, n: usize| {
            (0..n)
                .map(|_| *WORDS.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let (nq, nc, nr) = (rng.random_range(1..8), rng.random_range(0..15), rng.random_range(1..30));
        let (q, c, raw) = (words(&mut rng, nq), words(&mut rng, nc), words(&mut rng, nr));
        let out = compress_answer(&q, &c, &raw, &mock).map_err(|e| e.to_string())?;
        if out.chars().count() > raw.chars().count() {
            return Err(format!("case {i}: {out:?} longer than {raw:?}"));
        }
    }
    let report = replay(&Corpus::bundled(), &[Mode::Baseline, Mode::Query], &mock_options());
    let mean = |m: Mode| {
        report
            .mode(m)
            .and_then(|r| r.response_chars)
            .map(|s| s.mean)
            .unwrap_or(f64::NAN)
    };
    let (base, query) = (mean(Mode::Baseline), mean(Mode::Query));
    if query.is_nan() || query >= base {
        return Err(format!("query mean {query:.1} not below baseline mean {base:.1}"));
    }
    Ok(format!(
        "2000 compressions never lengthened; mean chars baseline {base:.1} -> query {query:.1} ({:.1}% shorter; reference system reported 85%)",
        report.conciseness_reduction_pct.unwrap_or(0.0)
    ))
}

fn mock_options() -> ReplayOptions {
    ReplayOptions::mock(Arc::new(HashedEmbedder::default()))
}

fn corpus_replay() -> Outcome {
    let started = Instant::now();
    let corpus = Corpus::bundled();
    let first = replay(&corpus, &Mode::ALL, &mock_options());
    within(started, Duration::from_secs(60))?;
    if !first.invariant_violations.is_empty() {
        return Err(format!("invariant violations: {:?}", first.invariant_violations));
    }
    let mut rates = Vec::new();
    for m in &first.modes {
        let rate = m.specific_hit_rate.ok_or("no specific cases")?;
        if rate < 0.90 {
            return Err(format!("{} specific hit-rate {rate:.3} below 0.90", m.mode));
        }
        rates.push(format!("{} {rate:.2}", m.mode));
    }
    let second = replay(&corpus, &Mode::ALL, &mock_options());
    if first.to_json() != second.to_json() {
        return Err("report differs between runs".into());
    }
    Ok(format!(
        "{} cases x 3 modes; specific hit-rate {}; no invariant violations; report reproducible",
        corpus.cases.len(),
        rates.join(", ")
    ))
}

fn desk_latency() -> Outcome {
    let embedder = Arc::new(HashedEmbedder::default());
    let corpus = Corpus::bundled();
    let pool: Vec<String> = corpus.personas.values().flat_map(|t| sentences(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1A7);
    let mut store = MemoryStore::new(embedder.dimension());
    for i in 0..10_000 {
        let text = (0..3)
            .map(|_| pool.choose(&mut rng).unwrap().as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let embedding = embedder.embed(&text).map_err(|e| e.to_string())?;
        store
            .insert(memcue_core::MemoryBlock {
                id: format!("pre-{i:06}"),
                session_id: "pre".into(),
                start_timestamp: i as u64 * 1_000,
                text,
                embedding,
            })
            .map_err(|e| e.to_string())?;
    }
    let services = Services {
        store: store.shared(),
        embedder,
        backend: Arc::new(ExtractiveMock::new()),
        clock: Arc::new(WallClock::new()),
        log: Arc::new(InteractionLog::in_memory()),
    };
    let session = Session::new("bench", SessionConfig::default(), services).map_err(|e| e.to_string())?;
    let questions: Vec<&str> = corpus.cases.iter().map(|c| c.question.as_str()).collect();
    let mut times = Vec::new();
    for i in 0..300u64 {
        let ctx = pool.choose(&mut rng).unwrap();
        session
            .ingest(TranscriptEvent::new(ctx, 20_000_000 + i * 1_000, None).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let mode = Mode::ALL[i as usize % 3];
        let q = mode.takes_query().then(|| *questions.choose(&mut rng).unwrap());
        let t = Instant::now();
        session.trigger(mode, q, None).map_err(|e| e.to_string())?;
        times.push(t.elapsed());
    }
    times.sort();
    let p95 = times[times.len() * 95 / 100];
    let p50 = times[times.len() / 2];
    if p95 >= Duration::from_millis(50) {
        return Err(format!("p95 {:.1} ms over 50 ms", p95.as_secs_f64() * 1e3));
    }
    Ok(format!(
        "10000 blocks, 300 triggers: p50 {:.2} ms, p95 {:.2} ms",
        p50.as_secs_f64() * 1e3,
        p95.as_secs_f64() * 1e3
    ))
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9E55);
    let mut store = MemoryStore::new(32);
    for i in 0..100 {
        store.insert(random_block(&mut rng, i, 32)).map_err(|e| e.to_string())?;
    }
    let store_path = dir.path().join("memory.jsonl");
    store.persist(&store_path).map_err(|e| e.to_string())?;
    let loaded = MemoryStore::load(&store_path).map_err(|e| e.to_string())?;
    let bits = |s: &MemoryStore| -> Vec<(String, Vec<u32>)> {
        s.blocks()
            .iter()
            .map(|b| (b.id.clone(), b.embedding.values().iter().map(|x| x.to_bits()).collect()))
            .collect()
    };
    let same_blocks = store.blocks().iter().zip(loaded.blocks()).all(|(a, b)| **a == *b);
    if loaded.len() != 100 || !same_blocks || bits(&store) != bits(&loaded) {
        return Err("store round trip changed blocks".into());
    }

    let log_path = dir.path().join("log.jsonl");
    let records: Vec<_> = (0..100).map(|i| random_record(&mut rng, i)).collect();
    {
        let log = InteractionLog::open(&log_path).map_err(|e| e.to_string())?;
        for r in &records {
            log.append(r.clone()).map_err(|e| e.to_string())?;
        }
    }
    let reopened = InteractionLog::open(&log_path).map_err(|e| e.to_string())?;
    if reopened.list(None, None) != records {
        return Err("log round trip changed records".into());
    }
    Ok("100 blocks (bit-exact embeddings) and 100 records round-tripped".into())
}
