use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::message::{Message, MessageId, Topic};

pub type SummaryId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub id: SummaryId,
    /// Sorted by sequence number.
    pub source_ids: Vec<MessageId>,
    pub tokens: u64,
    pub preserved_keys: Vec<MessageId>,
    pub fidelity: f64,
    /// Sequence number of the first source; orders the summary in the window.
    pub first_seq: u32,
    pub last_turn: u32,
    pub topics: BTreeSet<Topic>,
}

/// Deterministic extractive stand-in for a summarization model.
///
/// `tokens = ceil(rho · Σ source tokens)`; every key message among the
/// sources is preserved.
pub fn summarize_stub(id: SummaryId, sources: &[Message], rho: f64) -> Summary {
    assert!(!sources.is_empty(), "summary needs at least one source");
    let total: u64 = sources.iter().map(|m| m.tokens).sum();
    let preserved_keys: Vec<MessageId> = sources.iter().filter(|m| m.is_key).map(|m| m.id).collect();
    let mut source_ids: Vec<MessageId> = sources.iter().map(|m| m.id).collect();
    source_ids.sort_unstable();
    Summary {
        id,
        source_ids,
        tokens: ((rho * total as f64).ceil() as u64).max(1),
        fidelity: if preserved_keys.is_empty() { 0.7 } else { 0.9 },
        preserved_keys,
        first_seq: sources.iter().map(|m| m.seq).min().expect("non-empty"),
        last_turn: sources.iter().map(|m| m.turn_index).max().expect("non-empty"),
        topics: sources.iter().map(|m| m.topic).collect(),
    }
}

/// Condenses several summaries into one, keeping every preserved key.
pub fn fold_summaries(id: SummaryId, parts: &[Summary], rho: f64) -> Summary {
    assert!(!parts.is_empty(), "fold needs at least one summary");
    let total: u64 = parts.iter().map(|s| s.tokens).sum();
    let mut source_ids: Vec<MessageId> = parts.iter().flat_map(|s| s.source_ids.iter().copied()).collect();
    source_ids.sort_unstable();
    let mut preserved_keys: Vec<MessageId> = parts.iter().flat_map(|s| s.preserved_keys.iter().copied()).collect();
    preserved_keys.sort_unstable();
    Summary {
        id,
        source_ids,
        tokens: ((rho * total as f64).ceil() as u64).max(1),
        preserved_keys,
        fidelity: parts.iter().map(|s| s.fidelity).fold(1.0, f64::min),
        first_seq: parts.iter().map(|s| s.first_seq).min().expect("non-empty"),
        last_turn: parts.iter().map(|s| s.last_turn).max().expect("non-empty"),
        topics: parts.iter().flat_map(|s| s.topics.iter().copied()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum Entry {
    Message(Message),
    Summary(Summary),
}

impl Entry {
    pub fn tokens(&self) -> u64 {
        match self {
            Entry::Message(m) => m.tokens,
            Entry::Summary(s) => s.tokens,
        }
    }

    pub fn order_key(&self) -> u32 {
        match self {
            Entry::Message(m) => m.seq,
            Entry::Summary(s) => s.first_seq,
        }
    }

    pub fn has_topic(&self, t: Topic) -> bool {
        match self {
            Entry::Message(m) => m.topic == t,
            Entry::Summary(s) => s.topics.contains(&t),
        }
    }

    pub fn as_message(&self) -> Option<&Message> {
        match self {
            Entry::Message(m) => Some(m),
            Entry::Summary(_) => None,
        }
    }

    pub fn as_summary(&self) -> Option<&Summary> {
        match self {
            Entry::Summary(s) => Some(s),
            Entry::Message(_) => None,
        }
    }
}

/// The active, token-bounded context. Entries stay in conversation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub limit: u64,
    entries: Vec<Entry>,
    used: u64,
}

impl ContextWindow {
    pub fn new(limit: u64) -> Self {
        Self { limit, entries: Vec::new(), used: 0 }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert keeping conversation order.
    pub fn insert(&mut self, e: Entry) {
        let k = e.order_key();
        let at = self.entries.partition_point(|x| x.order_key() <= k);
        self.used += e.tokens();
        self.entries.insert(at, e);
    }

    pub fn remove(&mut self, idx: usize) -> Entry {
        let e = self.entries.remove(idx);
        self.used -= e.tokens();
        e
    }

    pub fn replace(&mut self, idx: usize, e: Entry) -> Entry {
        self.used = self.used - self.entries[idx].tokens() + e.tokens();
        std::mem::replace(&mut self.entries[idx], e)
    }

    pub fn position_of_message(&self, id: MessageId) -> Option<usize> {
        self.entries.iter().position(|e| e.as_message().is_some_and(|m| m.id == id))
    }

    pub fn position_of_summary(&self, id: SummaryId) -> Option<usize> {
        self.entries.iter().position(|e| e.as_summary().is_some_and(|s| s.id == id))
    }

    /// Key message ids present verbatim or through a summary.
    pub fn represented_keys(&self) -> BTreeSet<MessageId> {
        let mut out = BTreeSet::new();
        for e in &self.entries {
            match e {
                Entry::Message(m) if m.is_key => {
                    out.insert(m.id);
                }
                Entry::Summary(s) => out.extend(s.preserved_keys.iter().copied()),
                _ => {}
            }
        }
        out
    }

    pub fn summary_tokens(&self) -> u64 {
        self.entries.iter().filter_map(Entry::as_summary).map(|s| s.tokens).sum()
    }
}
