use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::compaction::{compact_clm, compact_memgpt, CompactionOutcome, CompactionParams};
use super::message::{Message, MessageId, Topic};
use super::window::{ContextWindow, Entry, Summary, SummaryId};
use super::ContextError;
use crate::sim::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    /// Append until overflow, then cut the oldest entries.
    None,
    FifoTruncate,
    SlidingWindow,
    MemGptStyle,
    /// Value-scored compaction with tiers and fault promotion.
    Clm,
}

impl ContextPolicy {
    pub const ALL: [ContextPolicy; 5] = [
        ContextPolicy::None,
        ContextPolicy::FifoTruncate,
        ContextPolicy::SlidingWindow,
        ContextPolicy::MemGptStyle,
        ContextPolicy::Clm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContextPolicy::None => "none",
            ContextPolicy::FifoTruncate => "fifo",
            ContextPolicy::SlidingWindow => "sliding",
            ContextPolicy::MemGptStyle => "memgpt",
            ContextPolicy::Clm => "clm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ContextPolicy::None => "No Management",
            ContextPolicy::FifoTruncate => "FIFO Truncation",
            ContextPolicy::SlidingWindow => "Sliding Window",
            ContextPolicy::MemGptStyle => "MemGPT-style",
            ContextPolicy::Clm => "CLM",
        }
    }

    pub fn summarizes(self) -> bool {
        matches!(self, ContextPolicy::MemGptStyle | ContextPolicy::Clm)
    }
}

impl fmt::Display for ContextPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" | "nomanagement" => Ok(ContextPolicy::None),
            "fifo" | "fifotruncate" | "fifotruncation" => Ok(ContextPolicy::FifoTruncate),
            "sliding" | "slidingwindow" => Ok(ContextPolicy::SlidingWindow),
            "memgpt" | "memgptstyle" => Ok(ContextPolicy::MemGptStyle),
            "clm" => Ok(ContextPolicy::Clm),
            _ => Err(format!("unknown context policy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextParams {
    pub compaction: CompactionParams,
    /// Compaction starts above this fraction of the window.
    pub trigger: f64,
    /// Trigger used once the average message exceeds `limit / large_message_divisor`.
    pub trigger_large: f64,
    pub large_message_divisor: u64,
    /// Compaction stops at this fraction of the window.
    pub target: f64,
    /// Turns kept by the sliding window.
    pub sliding_turns: u32,
    /// Share of the window the MemGPT-style baseline lets summaries occupy.
    pub memgpt_summary_share: f64,
    pub tier1_latency_ms: Millis,
    pub tier2_latency_ms: Millis,
}

impl Default for ContextParams {
    fn default() -> Self {
        Self {
            compaction: CompactionParams::default(),
            trigger: 0.75,
            trigger_large: 0.65,
            large_message_divisor: 50,
            target: 0.60,
            sliding_turns: 20,
            memgpt_summary_share: 0.20,
            tier1_latency_ms: 1000,
            tier2_latency_ms: 3000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub injections: u64,
    pub injected_tokens: u64,
    pub overflows: u64,
    pub compactions: u64,
    pub compact_cost: u64,
    pub tier1_faults: u64,
    pub tier2_faults: u64,
    pub fault_latency_ms: Millis,
    /// Σ used / limit, sampled after each injection.
    pub utilization_sum: f64,
    pub next_summary_id: SummaryId,
}

/// Per-injection record, one line of a context event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectRecord {
    pub seq: u32,
    pub used: u64,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub overflow: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fault_tier: Option<u8>,
    pub fault_latency_ms: Millis,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub compaction: Option<CompactionOutcome>,
    /// Messages dropped without any summary.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub dropped: Vec<MessageId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub agent_id: u32,
    pub policy: ContextPolicy,
    pub params: ContextParams,
    pub window: ContextWindow,
    /// Warm tier: every summary ever produced.
    pub tier1: BTreeMap<SummaryId, Summary>,
    /// Cold tier: the full transcript.
    pub tier2: Vec<Message>,
    /// Messages that left the window with no summary covering them.
    pub dropped: BTreeSet<MessageId>,
    pub counters: Counters,
    pub hibernated: bool,
    pub last_topic: Option<Topic>,
}

impl Session {
    pub fn new(policy: ContextPolicy, limit: u64, params: ContextParams) -> Self {
        Self {
            agent_id: 0,
            policy,
            params,
            window: ContextWindow::new(limit),
            tier1: BTreeMap::new(),
            tier2: Vec::new(),
            dropped: BTreeSet::new(),
            counters: Counters::default(),
            hibernated: false,
            last_topic: None,
        }
    }

    pub fn limit(&self) -> u64 {
        self.window.limit
    }

    fn trigger_tokens(&self) -> u64 {
        let c = &self.counters;
        let avg = c.injected_tokens.checked_div(c.injections).unwrap_or(0);
        let frac = if avg * self.params.large_message_divisor > self.limit() {
            self.params.trigger_large
        } else {
            self.params.trigger
        };
        (frac * self.limit() as f64).floor() as u64
    }

    fn target_tokens(&self) -> u64 {
        (self.params.target * self.limit() as f64).floor() as u64
    }

    /// Add one message, applying the session's policy.
    pub fn inject(&mut self, m: Message) -> Result<InjectRecord, ContextError> {
        if self.hibernated {
            return Err(ContextError::SessionHibernated);
        }
        let now = m.turn_index;
        let topic = m.topic;
        self.tier2.push(m.clone());
        self.counters.injections += 1;
        self.counters.injected_tokens += m.tokens;
        let mut rec = InjectRecord {
            seq: m.seq,
            used: 0,
            overflow: false,
            fault_tier: None,
            fault_latency_ms: 0,
            compaction: None,
            dropped: Vec::new(),
        };
        let limit = self.limit();
        match self.policy {
            ContextPolicy::None => {
                self.window.insert(Entry::Message(m));
                if self.window.used() > limit {
                    rec.overflow = true;
                    while self.window.used() > limit {
                        self.drop_oldest(&mut rec);
                    }
                }
            }
            ContextPolicy::FifoTruncate => {
                while !self.window.is_empty() && self.window.used() + m.tokens > limit {
                    self.drop_oldest(&mut rec);
                }
                self.window.insert(Entry::Message(m));
            }
            ContextPolicy::SlidingWindow => {
                self.window.insert(Entry::Message(m));
                let k = self.params.sliding_turns;
                while self.window.entries().first().is_some_and(|e| {
                    e.as_message().is_some_and(|x| x.turn_index + k <= now)
                }) || self.window.used() > limit
                {
                    self.drop_oldest(&mut rec);
                }
            }
            ContextPolicy::MemGptStyle => {
                self.window.insert(Entry::Message(m));
                if self.window.used() > self.trigger_tokens() {
                    let budget = (self.params.memgpt_summary_share * limit as f64).floor() as u64;
                    let target = self.target_tokens();
                    let out = compact_memgpt(
                        &mut self.window,
                        target,
                        self.params.compaction.rho,
                        budget,
                        &mut self.counters.next_summary_id,
                    )?;
                    self.absorb(out, &mut rec);
                }
                rec.overflow = self.window.used() > limit;
            }
            ContextPolicy::Clm => {
                self.fault_in(topic, &mut rec);
                self.window.insert(Entry::Message(m));
                if self.window.used() > self.trigger_tokens() {
                    let target = self.target_tokens();
                    let out = compact_clm(
                        &mut self.window,
                        now,
                        Some(topic),
                        target,
                        &self.params.compaction,
                        &mut self.counters.next_summary_id,
                    )?;
                    self.absorb(out, &mut rec);
                }
                // Compaction runs before the window is handed to the model,
                // so only what is left afterwards can overflow.
                rec.overflow = self.window.used() > limit;
            }
        }
        if rec.overflow {
            self.counters.overflows += 1;
        }
        self.counters.utilization_sum += self.window.used() as f64 / limit as f64;
        self.last_topic = Some(topic);
        rec.used = self.window.used();
        Ok(rec)
    }

    fn drop_oldest(&mut self, rec: &mut InjectRecord) {
        if self.window.is_empty() {
            return;
        }
        if let Entry::Message(x) = self.window.remove(0) {
            self.dropped.insert(x.id);
            rec.dropped.push(x.id);
        }
    }

    fn absorb(&mut self, out: CompactionOutcome, rec: &mut InjectRecord) {
        if out.victims.is_empty() && out.evicted_summaries.is_empty() {
            return;
        }
        self.counters.compactions += 1;
        self.counters.compact_cost += out.cost_tokens;
        for s in &out.summaries {
            self.tier1.insert(s.id, s.clone());
        }
        rec.compaction = Some(out);
    }

    /// On a switch to a topic with nothing in the window, bring back the
    /// closest stored material: a warm summary if one covers the topic,
    /// otherwise the latest cold message.
    fn fault_in(&mut self, topic: Topic, rec: &mut InjectRecord) {
        if self.last_topic.is_none_or(|t| t == topic) {
            return;
        }
        if self.window.entries().iter().any(|e| e.has_topic(topic)) {
            return;
        }
        let earlier = &self.tier2[..self.tier2.len() - 1];
        if !earlier.iter().any(|m| m.topic == topic) {
            return;
        }
        let warm = self
            .tier1
            .values()
            .filter(|s| s.topics.contains(&topic) && self.window.position_of_summary(s.id).is_none())
            .max_by_key(|s| (s.last_turn, s.id))
            .cloned();
        let (tier, latency) = match warm {
            Some(s) => {
                self.window.insert(Entry::Summary(s));
                self.counters.tier1_faults += 1;
                (1, self.params.tier1_latency_ms)
            }
            None => {
                let m = earlier.iter().rev().find(|m| m.topic == topic).expect("checked above").clone();
                self.dropped.remove(&m.id);
                self.window.insert(Entry::Message(m));
                self.counters.tier2_faults += 1;
                (2, self.params.tier2_latency_ms)
            }
        };
        self.counters.fault_latency_ms += latency;
        rec.fault_tier = Some(tier);
        rec.fault_latency_ms = latency;
    }

    pub fn key_ids(&self) -> BTreeSet<MessageId> {
        self.tier2.iter().filter(|m| m.is_key).map(|m| m.id).collect()
    }
}

/// Feed `messages` into a fresh session, returning it with the per-injection
/// records.
pub fn run_session(
    messages: &[Message],
    policy: ContextPolicy,
    limit: u64,
    params: ContextParams,
) -> Result<(Session, Vec<InjectRecord>), ContextError> {
    let mut s = Session::new(policy, limit, params);
    let recs = messages.iter().map(|m| s.inject(m.clone())).collect::<Result<Vec<_>, _>>()?;
    Ok((s, recs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs(n: u32, tokens: u64) -> Vec<Message> {
        (0..n).map(|i| Message::new(i, tokens)).collect()
    }

    #[test]
    fn no_overflow_no_fault() {
        let mut s = Session::new(ContextPolicy::Clm, 1000, ContextParams::default());
        let r = s.inject(Message::new(0, 100)).unwrap();
        assert_eq!(r.fault_latency_ms, 0);
        assert!(!r.overflow && r.compaction.is_none());
    }

    #[test]
    fn none_overflows_and_truncates() {
        let (s, recs) = run_session(&msgs(12, 100), ContextPolicy::None, 1000, ContextParams::default()).unwrap();
        assert_eq!(s.counters.overflows, 2);
        assert!(recs.iter().all(|r| r.used <= 1000));
        assert_eq!(s.dropped.len(), 2);
    }

    #[test]
    fn proactive_policies_stay_within_limit() {
        for p in [ContextPolicy::FifoTruncate, ContextPolicy::SlidingWindow, ContextPolicy::MemGptStyle, ContextPolicy::Clm] {
            let (s, recs) = run_session(&msgs(100, 130), p, 1000, ContextParams::default()).unwrap();
            assert!(recs.iter().all(|r| r.used <= 1000), "{p}");
            assert_eq!(s.counters.overflows, 0, "{p}");
        }
    }

    #[test]
    fn sliding_window_keeps_last_turns() {
        let params = ContextParams { sliding_turns: 3, ..Default::default() };
        let (s, _) = run_session(&msgs(20, 10), ContextPolicy::SlidingWindow, 10_000, params).unwrap();
        let kept: Vec<u32> = s.window.entries().iter().map(|e| e.order_key()).collect();
        assert_eq!(kept, (14..20).collect::<Vec<_>>());
    }

    #[test]
    fn hibernated_session_rejects_injection() {
        let mut s = Session::new(ContextPolicy::Clm, 1000, ContextParams::default());
        s.hibernated = true;
        assert_eq!(s.inject(Message::new(0, 1)).unwrap_err(), ContextError::SessionHibernated);
    }

    #[test]
    fn topic_return_faults_in_warm_summary() {
        let mut s = Session::new(ContextPolicy::Clm, 1000, ContextParams::default());
        for seq in 0..16 {
            let topic = if seq < 4 { 0 } else { 1 };
            s.inject(Message::new(seq, 100).with_topic(topic).with_importance(0.1)).unwrap();
        }
        assert!(!s.window.entries().iter().any(|e| e.has_topic(0)));
        let r = s.inject(Message::new(16, 100).with_topic(0)).unwrap();
        assert_eq!(r.fault_tier, Some(1));
        assert_eq!(r.fault_latency_ms, 1000);
        assert_eq!(s.counters.tier1_faults, 1);
    }

    #[test]
    fn fifo_truncation_reaches_cold_tier_fault_free() {
        let (s, _) = run_session(&msgs(30, 100), ContextPolicy::FifoTruncate, 1000, ContextParams::default()).unwrap();
        assert_eq!(s.tier2.len(), 30);
        assert_eq!(s.counters.tier1_faults + s.counters.tier2_faults, 0);
    }
}
