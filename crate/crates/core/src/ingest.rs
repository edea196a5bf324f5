//! Rolling transcript context and eviction staging.
//!
//! The [`ContextBuffer`] holds the most recent `capacity_chars` characters of
//! the whitespace-normalized transcript. Text pushed out of the buffer is
//! returned as an [`Evicted`] piece and accumulated by a [`ChunkStager`] until
//! enough has built up to form one memory block.
//!
//! Eviction only ever happens at token starts, so a word is never split
//! between the context and the evicted stream. When the character budget
//! lands inside a word, the whole word is evicted.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{char_len, normalize_whitespace};

pub const DEFAULT_CONTEXT_CHARS: usize = 75;
pub const DEFAULT_FLUSH_THRESHOLD_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("transcript event text is empty after whitespace normalization")]
    EmptyText,
    #[error("transcript timestamp {got} precedes previous timestamp {previous}")]
    TimestampRegression { previous: u64, got: u64 },
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("transcript line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
}

/// One recognized utterance fragment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub text: String,
    /// Milliseconds since the session epoch.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

impl TranscriptEvent {
    /// Builds an event, normalizing whitespace in `text`.
    pub fn new(text: impl AsRef<str>, timestamp: u64, speaker: Option<String>) -> Result<Self, IngestError> {
        let text = normalize_whitespace(text.as_ref());
        if text.is_empty() {
            return Err(IngestError::EmptyText);
        }
        Ok(Self {
            text,
            timestamp,
            speaker,
        })
    }

    /// Re-normalizes an event that may have been deserialized from the wire.
    pub fn normalized(self) -> Result<Self, IngestError> {
        Self::new(self.text, self.timestamp, self.speaker)
    }
}

/// Text removed from the front of the context buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evicted {
    pub text: String,
    /// Timestamp of the event that contributed the first evicted character.
    pub timestamp: u64,
}

/// Bounded rolling window over the most recent transcript.
#[derive(Debug, Clone)]
pub struct ContextBuffer {
    capacity_chars: usize,
    content: String,
    session_epoch: u64,
    // (char offset in content, timestamp) for each event still represented.
    segments: VecDeque<(usize, u64)>,
}

impl ContextBuffer {
    pub fn new(capacity_chars: usize) -> Result<Self, IngestError> {
        Self::with_epoch(capacity_chars, 0)
    }

    pub fn with_epoch(capacity_chars: usize, session_epoch: u64) -> Result<Self, IngestError> {
        if capacity_chars == 0 {
            return Err(IngestError::ZeroCapacity);
        }
        Ok(Self {
            capacity_chars,
            content: String::new(),
            session_epoch,
            segments: VecDeque::new(),
        })
    }

    pub fn capacity_chars(&self) -> usize {
        self.capacity_chars
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    pub fn session_epoch(&self) -> u64 {
        self.session_epoch
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }

    /// Owned copy of the current content.
    pub fn snapshot(&self) -> String {
        self.content.clone()
    }

    /// Appends an event and returns whatever had to leave the window.
    pub fn append(&mut self, event: &TranscriptEvent) -> Option<Evicted> {
        let incoming = normalize_whitespace(&event.text);
        if incoming.is_empty() {
            return None;
        }
        let offset = if self.content.is_empty() {
            0
        } else {
            self.content.push(' ');
            char_len(&self.content)
        };
        self.content.push_str(&incoming);
        self.segments.push_back((offset, event.timestamp));

        let total = char_len(&self.content);
        if total <= self.capacity_chars {
            return None;
        }
        let chars: Vec<char> = self.content.chars().collect();
        let cut = total - self.capacity_chars;
        // First token start at or after the cut point; none means evict all.
        let keep_from = (cut..total)
            .find(|&i| chars[i] != ' ' && chars[i - 1] == ' ')
            .unwrap_or(total);
        Some(self.evict_prefix(&chars, keep_from))
    }

    /// Moves the entire content out of the buffer.
    pub fn drain(&mut self) -> Option<Evicted> {
        if self.content.is_empty() {
            return None;
        }
        let chars: Vec<char> = self.content.chars().collect();
        let total = chars.len();
        Some(self.evict_prefix(&chars, total))
    }

    fn evict_prefix(&mut self, chars: &[char], keep_from: usize) -> Evicted {
        let timestamp = self.segments.front().map(|s| s.1).unwrap_or(self.session_epoch);
        let total = chars.len();
        let evicted_end = if keep_from >= total { total } else { keep_from - 1 };
        let evicted: String = chars[..evicted_end].iter().collect();

        if keep_from >= total {
            self.content.clear();
            self.segments.clear();
        } else {
            self.content = chars[keep_from..].iter().collect();
            while self.segments.len() > 1 && self.segments[1].0 <= keep_from {
                self.segments.pop_front();
            }
            for seg in self.segments.iter_mut() {
                seg.0 = seg.0.saturating_sub(keep_from);
            }
        }
        Evicted {
            text: evicted,
            timestamp,
        }
    }
}

/// A block of evicted text ready to be embedded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedBlock {
    pub text: String,
    pub timestamp: u64,
}

/// Accumulates evicted text until it is large enough to become one block.
#[derive(Debug, Clone)]
pub struct ChunkStager {
    pending: String,
    flush_threshold_chars: usize,
    oldest_pending_timestamp: Option<u64>,
    last_block_timestamp: Option<u64>,
}

impl ChunkStager {
    pub fn new(flush_threshold_chars: usize) -> Result<Self, IngestError> {
        if flush_threshold_chars == 0 {
            return Err(IngestError::ZeroCapacity);
        }
        Ok(Self {
            pending: String::new(),
            flush_threshold_chars,
            oldest_pending_timestamp: None,
            last_block_timestamp: None,
        })
    }

    pub fn pending(&self) -> &str {
        &self.pending
    }

    pub fn flush_threshold_chars(&self) -> usize {
        self.flush_threshold_chars
    }

    pub fn oldest_pending_timestamp(&self) -> Option<u64> {
        self.oldest_pending_timestamp
    }

    pub fn stage(&mut self, evicted: Evicted) {
        if evicted.text.is_empty() {
            return;
        }
        if self.pending.is_empty() {
            self.oldest_pending_timestamp = Some(evicted.timestamp);
        } else {
            self.pending.push(' ');
        }
        self.pending.push_str(&evicted.text);
    }

    /// Emits the pending text as one block when it has reached the threshold,
    /// or unconditionally (if non-empty) when `force` is set.
    ///
    /// Block timestamps are strictly increasing: a block whose oldest text
    /// shares a timestamp with the previous block is stamped one millisecond
    /// later.
    pub fn flush(&mut self, force: bool) -> Option<StagedBlock> {
        if self.pending.is_empty() {
            return None;
        }
        if !force && char_len(&self.pending) < self.flush_threshold_chars {
            return None;
        }
        let mut timestamp = self.oldest_pending_timestamp.unwrap_or(0);
        if let Some(last) = self.last_block_timestamp {
            timestamp = timestamp.max(last + 1);
        }
        self.last_block_timestamp = Some(timestamp);
        self.oldest_pending_timestamp = None;
        Some(StagedBlock {
            text: std::mem::take(&mut self.pending),
            timestamp,
        })
    }
}

/// Appends `event` to `buffer`, stages anything evicted, and returns the
/// evicted text (empty when nothing left the window).
pub fn append(buffer: &mut ContextBuffer, stager: &mut ChunkStager, event: &TranscriptEvent) -> String {
    match buffer.append(event) {
        Some(evicted) => {
            let text = evicted.text.clone();
            stager.stage(evicted);
            text
        }
        None => String::new(),
    }
}

/// Parses a transcript file: one `timestamp<TAB>speaker<TAB>text` record
/// per line, timestamp in milliseconds, speaker possibly empty. Blank lines
/// and lines starting with `#` are skipped.
pub fn parse_transcript(input: &str) -> Result<Vec<TranscriptEvent>, IngestError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| IngestError::MalformedLine {
            line: line_no,
            reason: reason.to_string(),
        };
        let mut fields = line.splitn(3, '\t');
        let (Some(ts), Some(speaker), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed("expected timestamp, speaker and text separated by tabs"));
        };
        let timestamp = ts
            .trim()
            .parse::<u64>()
            .map_err(|_| malformed("timestamp is not an integer"))?;
        let speaker = Some(speaker.trim()).filter(|s| !s.is_empty()).map(str::to_string);
        let event = TranscriptEvent::new(text, timestamp, speaker).map_err(|e| malformed(&e.to_string()))?;
        events.push(event);
    }
    Ok(events)
}
