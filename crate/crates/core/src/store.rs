//! Memory block storage, nearest-neighbour search and prompt assembly.
//!
//! Search is an exact scan: every block is scored by cosine similarity and the
//! best `k` are kept in a bounded heap. Ranking order is similarity
//! descending, then older `start_timestamp`, then `id`, which makes results
//! fully deterministic.
//!
//! # Persistence format
//!
//! Line-delimited JSON. The first line is a header:
//!
//! ```text
//! {"format":"memcue-store","version":1,"dimension":384}
//! ```
//!
//! followed by one block per line:
//!
//! ```text
//! {"id":"s1-000001","session_id":"s1","start_timestamp":1200,"text":"...","embedding":[0.1,...]}
//! ```
//!
//! Embedding values are written as the exact `f64` widening of each `f32`, so
//! a load/persist round trip is bit-exact.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_slices, EmbeddingVector};
use crate::text::char_len;

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_TOKEN_BUDGET: usize = 4096;
const STORE_FORMAT: &str = "memcue-store";
const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("block id {0:?} already present")]
    DuplicateId(String),
    #[error("dimension mismatch: store has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid block: {0}")]
    InvalidBlock(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
}

/// One encoded chunk of past transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBlock {
    pub id: String,
    pub session_id: String,
    pub start_timestamp: u64,
    pub text: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// `ceil(chars / 4)`
    #[default]
    #[serde(rename = "chars_div_4", alias = "chars_div4")]
    CharsDiv4,
    WhitespaceWords,
}

impl Tokenizer {
    pub fn count(self, text: &str) -> usize {
        match self {
            Tokenizer::CharsDiv4 => char_len(text).div_ceil(4),
            Tokenizer::WhitespaceWords => text.split_whitespace().count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub token_budget: usize,
    pub tokenizer: Tokenizer,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            token_budget: DEFAULT_TOKEN_BUDGET,
            tokenizer: Tokenizer::CharsDiv4,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.token_budget == 0 {
            return Err("token_budget must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RankedHit {
    pub block_id: String,
    pub similarity: f32,
    pub block: Arc<MemoryBlock>,
}

/// Ranking order used by search: higher similarity first, then older
/// blocks, then lexicographically smaller ids.
pub fn rank_order(a_sim: f32, a: &MemoryBlock, b_sim: f32, b: &MemoryBlock) -> Ordering {
    b_sim
        .total_cmp(&a_sim)
        .then(a.start_timestamp.cmp(&b.start_timestamp))
        .then_with(|| a.id.cmp(&b.id))
}

struct HeapEntry {
    similarity: f32,
    block: Arc<MemoryBlock>,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // max-heap top is the worst-ranked entry
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.similarity, &self.block, other.similarity, &other.block)
    }
}

#[derive(Debug, Clone)]
pub struct MemoryStore {
    dimension: usize,
    blocks: Vec<Arc<MemoryBlock>>,
    index: HashMap<String, usize>,
}

pub type SharedStore = Arc<RwLock<MemoryStore>>;

impl MemoryStore {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            blocks: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn shared(self) -> SharedStore {
        Arc::new(RwLock::new(self))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<MemoryBlock>> {
        self.index.get(id).map(|&i| &self.blocks[i])
    }

    /// Blocks sorted by start timestamp, then id.
    pub fn blocks(&self) -> Vec<Arc<MemoryBlock>> {
        let mut out = self.blocks.clone();
        out.sort_by(|a, b| a.start_timestamp.cmp(&b.start_timestamp).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| b.id.as_str())
    }

    pub fn insert(&mut self, block: MemoryBlock) -> Result<(), StoreError> {
        if block.embedding.dimension() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                expected: self.dimension,
                got: block.embedding.dimension(),
            });
        }
        if self.index.contains_key(&block.id) {
            return Err(StoreError::DuplicateId(block.id));
        }
        if block.text.trim().is_empty() {
            return Err(StoreError::InvalidBlock(format!("block {} has empty text", block.id)));
        }
        if block.embedding.l2_norm() == 0.0 {
            return Err(StoreError::InvalidBlock(format!(
                "block {} has a zero embedding",
                block.id
            )));
        }
        self.index.insert(block.id.clone(), self.blocks.len());
        self.blocks.push(Arc::new(block));
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<Arc<MemoryBlock>> {
        let pos = self.index.remove(id)?;
        let removed = self.blocks.swap_remove(pos);
        if let Some(moved) = self.blocks.get(pos) {
            self.index.insert(moved.id.clone(), pos);
        }
        Some(removed)
    }

    /// Exact top-`k` cosine search.
    pub fn search(&self, query: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<RankedHit>, StoreError> {
        if query.dimension() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                expected: self.dimension,
                got: query.dimension(),
            });
        }
        let k = cfg.k.max(1);
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        for block in &self.blocks {
            let similarity = cosine_slices(query.values(), block.embedding.values())
                .map_err(|e| StoreError::InvalidBlock(e.to_string()))?;
            let entry = HeapEntry {
                similarity,
                block: Arc::clone(block),
            };
            if heap.len() < k {
                heap.push(entry);
            } else if let Some(worst) = heap.peek() {
                if entry < *worst {
                    heap.pop();
                    heap.push(entry);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|e| RankedHit {
                block_id: e.block.id.clone(),
                similarity: e.similarity,
                block: e.block,
            })
            .collect())
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            let header = StoreHeader {
                format: STORE_FORMAT.into(),
                version: STORE_VERSION,
                dimension: self.dimension,
            };
            serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
            for block in self.blocks() {
                serde_json::to_writer(&mut out, &BlockRecord::from(block.as_ref())).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let header: StoreHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| StoreError::CorruptRecord {
                line: 1,
                reason: format!("bad header: {e}"),
            })?,
            None => {
                return Err(StoreError::CorruptRecord {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
        };
        if header.format != STORE_FORMAT || header.version != STORE_VERSION {
            return Err(StoreError::CorruptRecord {
                line: 1,
                reason: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        let mut store = MemoryStore::new(header.dimension);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| StoreError::CorruptRecord { line: line_no, reason };
            let record: BlockRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            let block = record.into_block().map_err(|e| corrupt(e.to_string()))?;
            store.insert(block).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    version: u32,
    dimension: usize,
}

#[derive(Serialize, Deserialize)]
struct BlockRecord {
    id: String,
    session_id: String,
    start_timestamp: u64,
    text: String,
    embedding: Vec<f64>,
}

impl From<&MemoryBlock> for BlockRecord {
    fn from(b: &MemoryBlock) -> Self {
        Self {
            id: b.id.clone(),
            session_id: b.session_id.clone(),
            start_timestamp: b.start_timestamp,
            text: b.text.clone(),
            embedding: b.embedding.values().iter().map(|v| *v as f64).collect(),
        }
    }
}

impl BlockRecord {
    fn into_block(self) -> Result<MemoryBlock, crate::embedding::EmbedError> {
        Ok(MemoryBlock {
            id: self.id,
            session_id: self.session_id,
            start_timestamp: self.start_timestamp,
            text: self.text,
            embedding: EmbeddingVector::new(self.embedding.into_iter().map(|v| v as f32).collect())?,
        })
    }
}

/// Relevant-memory text assembled from search hits.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub text: String,
    /// Surviving block ids in the order they appear in `text`.
    pub block_ids: Vec<String>,
    pub tokens: usize,
    /// True when the single surviving block had to be cut to fit.
    pub truncated: bool,
}

/// Keeps the longest similarity-ordered prefix of `hits` that fits the token
/// budget, reorders the survivors by ascending start timestamp and joins them
/// with newlines. A lone top hit that exceeds the budget on its own is cut at
/// a word boundary.
pub fn assemble(hits: &[RankedHit], cfg: &RetrievalConfig) -> Assembly {
    let budget = cfg.token_budget.max(1);
    let mut survivors: Vec<&RankedHit> = Vec::new();
    let mut joined = String::new();
    for hit in hits {
        let mut candidate = joined.clone();
        if !candidate.is_empty() {
            candidate.push('\n');
        }
        candidate.push_str(&hit.block.text);
        if cfg.tokenizer.count(&candidate) > budget {
            break;
        }
        joined = candidate;
        survivors.push(hit);
    }

    if survivors.is_empty() {
        return match hits.first() {
            Some(top) => {
                let text = truncate_to_budget(&top.block.text, cfg.tokenizer, budget);
                Assembly {
                    tokens: cfg.tokenizer.count(&text),
                    text,
                    block_ids: vec![top.block_id.clone()],
                    truncated: true,
                }
            }
            None => Assembly {
                text: String::new(),
                block_ids: Vec::new(),
                tokens: 0,
                truncated: false,
            },
        };
    }

    survivors.sort_by(|a, b| {
        a.block
            .start_timestamp
            .cmp(&b.block.start_timestamp)
            .then_with(|| a.block_id.cmp(&b.block_id))
    });
    let text = survivors
        .iter()
        .map(|h| h.block.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    Assembly {
        tokens: cfg.tokenizer.count(&text),
        text,
        block_ids: survivors.iter().map(|h| h.block_id.clone()).collect(),
        truncated: false,
    }
}

pub fn assemble_relevant(hits: &[RankedHit], cfg: &RetrievalConfig) -> String {
    assemble(hits, cfg).text
}

fn truncate_to_budget(text: &str, tokenizer: Tokenizer, budget: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    // largest word count whose prefix fits; counts are monotone in the prefix
    let (mut lo, mut hi) = (0usize, words.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if tokenizer.count(&words[..mid].join(" ")) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    if lo > 0 {
        return words[..lo].join(" ");
    }
    // a single word longer than the whole budget: hard cut
    match tokenizer {
        Tokenizer::CharsDiv4 => text.trim_start().chars().take(budget * 4).collect(),
        Tokenizer::WhitespaceWords => words.first().map(|w| w.to_string()).unwrap_or_default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(id: &str, ts: u64, text: &str, values: Vec<f32>) -> MemoryBlock {
        MemoryBlock {
            id: id.into(),
            session_id: "s".into(),
            start_timestamp: ts,
            text: text.into(),
            embedding: EmbeddingVector::new(values).unwrap(),
        }
    }

    fn hit(id: &str, ts: u64, sim: f32, text: &str) -> RankedHit {
        let b = Arc::new(block(id, ts, text, vec![1.0, 0.0]));
        RankedHit {
            block_id: id.into(),
            similarity: sim,
            block: b,
        }
    }

    #[test]
    fn insert_then_find_by_own_embedding() {
        let mut s = MemoryStore::new(3);
        s.insert(block("a", 1, "alpha", vec![0.6, 0.8, 0.0])).unwrap();
        assert_eq!(s.len(), 1);
        let hits = s
            .search(
                &EmbeddingVector::new(vec![0.6, 0.8, 0.0]).unwrap(),
                &RetrievalConfig::default(),
            )
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].block_id, "a");
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let mut s = MemoryStore::new(2);
        s.insert(block("a", 1, "x", vec![1.0, 0.0])).unwrap();
        assert!(matches!(s.insert(block("a", 2, "y", vec![0.0, 1.0])), Err(StoreError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn dimension_is_enforced() {
        let mut s = MemoryStore::new(2);
        assert!(matches!(
            s.insert(block("a", 1, "x", vec![1.0, 0.0, 0.0])),
            Err(StoreError::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(matches!(
            s.search(&EmbeddingVector::new(vec![1.0]).unwrap(), &RetrievalConfig::default()),
            Err(StoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn orthogonal_basis_lookup() {
        let mut s = MemoryStore::new(3);
        s.insert(block("e1", 1, "one", vec![1.0, 0.0, 0.0])).unwrap();
        s.insert(block("e2", 2, "two", vec![0.0, 1.0, 0.0])).unwrap();
        s.insert(block("e3", 3, "three", vec![0.0, 0.0, 1.0])).unwrap();
        let cfg = RetrievalConfig {
            k: 1,
            ..Default::default()
        };
        let hits = s
            .search(&EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap(), &cfg)
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].block_id, "e1");
        assert_eq!(hits[0].similarity, 1.0);
    }

    #[test]
    fn empty_store_returns_nothing() {
        let s = MemoryStore::new(2);
        assert!(s
            .search(
                &EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
                &RetrievalConfig::default()
            )
            .unwrap()
            .is_empty());
    }

    #[test]
    fn ties_prefer_older_then_smaller_id() {
        let mut s = MemoryStore::new(2);
        s.insert(block("b", 5, "x", vec![1.0, 0.0])).unwrap();
        s.insert(block("a", 5, "x", vec![1.0, 0.0])).unwrap();
        s.insert(block("c", 1, "x", vec![1.0, 0.0])).unwrap();
        let hits = s
            .search(
                &EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
                &RetrievalConfig::default(),
            )
            .unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.block_id.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
    }

    #[test]
    fn remove_keeps_index_consistent() {
        let mut s = MemoryStore::new(2);
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            s.insert(block(id, i as u64, "x", vec![1.0, 0.0])).unwrap();
        }
        assert!(s.remove("a").is_some());
        assert!(s.remove("a").is_none());
        assert_eq!(s.get("c").unwrap().id, "c");
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn assembly_orders_by_time() {
        let hits = vec![hit("late", 20, 0.9, "second"), hit("early", 10, 0.5, "first")];
        assert_eq!(assemble_relevant(&hits, &RetrievalConfig::default()), "first\nsecond");
    }

    #[test]
    fn assembly_drops_lowest_similarity_over_budget() {
        // 12_000 chars = 3000 tokens, 8_000 chars = 2000 tokens; joined 5001 > 4096
        let big = "abc ".repeat(3000).trim_end().to_string() + "d";
        let medium = "xyz ".repeat(2000).trim_end().to_string() + "w";
        assert_eq!(Tokenizer::CharsDiv4.count(&big), 3000);
        assert_eq!(Tokenizer::CharsDiv4.count(&medium), 2000);
        let hits = vec![hit("top", 50, 0.9, &big), hit("next", 10, 0.8, &medium)];
        let a = assemble(&hits, &RetrievalConfig::default());
        assert_eq!(a.block_ids, vec!["top"]);
        assert_eq!(a.text, big);
        assert!(!a.truncated);
    }

    #[test]
    fn lone_oversized_hit_is_cut_at_a_word() {
        let text = "word ".repeat(50);
        let hits = vec![hit("a", 1, 0.9, text.trim())];
        let cfg = RetrievalConfig {
            token_budget: 10,
            ..Default::default()
        };
        let a = assemble(&hits, &cfg);
        assert!(a.truncated);
        assert!(a.tokens <= 10);
        // 8 words = 39 chars = 10 tokens; 9 words = 44 chars = 11 tokens
        assert_eq!(a.text, ["word"; 8].join(" "));
    }

    #[test]
    fn empty_hits_assemble_to_empty() {
        assert_eq!(assemble_relevant(&[], &RetrievalConfig::default()), "");
    }

    #[test]
    fn whitespace_word_tokenizer() {
        assert_eq!(Tokenizer::WhitespaceWords.count("a bb  ccc\nd"), 4);
        assert_eq!(Tokenizer::CharsDiv4.count("abcde"), 2);
        assert_eq!(Tokenizer::CharsDiv4.count(""), 0);
    }

    #[test]
    fn persist_round_trip_of_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        MemoryStore::new(7).persist(&path).unwrap();
        let loaded = MemoryStore::load(&path).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(loaded.dimension(), 7);
    }

    #[test]
    fn truncated_file_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut s = MemoryStore::new(2);
        s.insert(block("a", 1, "x", vec![1.0, 0.0])).unwrap();
        s.insert(block("b", 2, "y", vec![0.0, 1.0])).unwrap();
        s.persist(&path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &content[..content.len() - 10]).unwrap();
        match MemoryStore::load(&path) {
            Err(StoreError::CorruptRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            MemoryStore::load(&path),
            Err(StoreError::CorruptRecord { line: 1, .. })
        ));
    }
}
