//! Dispatch policies: the feedback-queue scheduler and the FIFO, Round Robin
//! and static Priority Queue baselines.
//!
//! A policy only owns its ready queues and answers three questions: which
//! queued turn runs next, how long it may run before being preempted, and
//! where it goes when that slice expires. Lanes, hangs, the reaper and
//! admission control live in the engine and are switched on per policy via
//! [`Features`].

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{AgentId, Turn, TurnId};
use crate::sim::Millis;

pub const LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fifo,
    RoundRobin,
    PriorityQueue,
    Mlfq,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] =
        [PolicyKind::Fifo, PolicyKind::RoundRobin, PolicyKind::PriorityQueue, PolicyKind::Mlfq];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Fifo => "fifo",
            PolicyKind::RoundRobin => "rr",
            PolicyKind::PriorityQueue => "pq",
            PolicyKind::Mlfq => "mlfq",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Fifo => "FIFO",
            PolicyKind::RoundRobin => "Round Robin",
            PolicyKind::PriorityQueue => "Priority Queue",
            PolicyKind::Mlfq => "MLFQ",
        }
    }

    pub fn is_baseline(self) -> bool {
        self != PolicyKind::Mlfq
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fifo" => Ok(PolicyKind::Fifo),
            "rr" | "round_robin" => Ok(PolicyKind::RoundRobin),
            "pq" | "priority" | "priority_queue" => Ok(PolicyKind::PriorityQueue),
            "mlfq" => Ok(PolicyKind::Mlfq),
            other => Err(format!("unknown scheduling policy '{other}'")),
        }
    }
}

/// Engine features a policy turns on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Features {
    pub reaper: bool,
    pub admission: bool,
    pub boost_interval: Option<Millis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlfqParams {
    pub quantum_ms: [Millis; LEVELS],
    /// Tokens a turn may consume at a level before being demoted.
    pub token_budget: [f64; LEVELS],
    /// `None` disables priority boosting.
    pub boost_interval_ms: Option<Millis>,
    /// Order ties within a level by the owning agent's dominant share.
    pub drf: bool,
}

impl Default for MlfqParams {
    fn default() -> Self {
        Self {
            quantum_ms: [5_000, 15_000, 60_000],
            token_budget: [2_000.0, 8_000.0, f64::INFINITY],
            boost_interval_ms: Some(60_000),
            drf: true,
        }
    }
}

/// Execution accounting the engine keeps for the running turn.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Allotment {
    pub level: u8,
    pub used_ms: Millis,
    pub tokens_used: f64,
    /// Tokens consumed per millisecond of execution.
    pub token_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueEntry {
    pub turn: TurnId,
    pub agent: AgentId,
    pub arrival: Millis,
    pub seq: u64,
}

impl QueueEntry {
    pub fn of(turn: &Turn, seq: u64) -> Self {
        Self { turn: turn.id, agent: turn.agent_id, arrival: turn.arrival, seq }
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    mlfq: MlfqParams,
    rr_slice_ms: Millis,
    queues: [VecDeque<QueueEntry>; LEVELS],
}

impl Policy {
    pub fn new(kind: PolicyKind, mlfq: MlfqParams, rr_slice_ms: Millis) -> Self {
        Self { kind, mlfq, rr_slice_ms, queues: Default::default() }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn features(&self) -> Features {
        match self.kind {
            PolicyKind::Mlfq => {
                Features { reaper: true, admission: true, boost_interval: self.mlfq.boost_interval_ms }
            }
            _ => Features { reaper: false, admission: false, boost_interval: None },
        }
    }

    /// Which queue a turn at `level` lives in.
    fn queue_index(&self, level: u8) -> usize {
        match self.kind {
            PolicyKind::Fifo | PolicyKind::RoundRobin => 0,
            PolicyKind::PriorityQueue | PolicyKind::Mlfq => (level as usize).min(LEVELS - 1),
        }
    }

    pub fn enqueue(&mut self, turn: &Turn, seq: u64) {
        let q = self.queue_index(turn.queue_level);
        self.queues[q].push_back(QueueEntry::of(turn, seq));
    }

    pub fn len(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }

    pub fn queue_lens(&self) -> [usize; LEVELS] {
        [self.queues[0].len(), self.queues[1].len(), self.queues[2].len()]
    }

    pub fn contains(&self, turn: TurnId) -> bool {
        self.queues.iter().flatten().any(|e| e.turn == turn)
    }

    /// Pop the next turn: lowest-numbered non-empty queue; within it, lowest
    /// dominant share first (MLFQ with DRF) and FIFO otherwise.
    pub fn select(&mut self, share: impl Fn(AgentId) -> f64) -> Option<TurnId> {
        let q = self.queues.iter_mut().find(|q| !q.is_empty())?;
        let idx = if self.kind == PolicyKind::Mlfq && self.mlfq.drf {
            let mut best = 0;
            let mut best_share = share(q[0].agent);
            for (i, e) in q.iter().enumerate().skip(1) {
                let s = share(e.agent);
                if s < best_share {
                    best = i;
                    best_share = s;
                }
            }
            best
        } else {
            0
        };
        q.remove(idx).map(|e| e.turn)
    }

    /// Longest the turn may run from now before a preemption point; `None`
    /// means run to completion.
    pub fn slice(&self, a: &Allotment) -> Option<Millis> {
        match self.kind {
            PolicyKind::Fifo | PolicyKind::PriorityQueue => None,
            PolicyKind::RoundRobin => Some(self.rr_slice_ms.saturating_sub(a.used_ms).max(1)),
            PolicyKind::Mlfq => {
                let l = (a.level as usize).min(LEVELS - 1);
                let by_time = self.mlfq.quantum_ms[l].saturating_sub(a.used_ms);
                let budget = self.mlfq.token_budget[l];
                let by_tokens = if budget.is_finite() && a.token_rate > 0.0 {
                    ((budget - a.tokens_used).max(0.0) / a.token_rate).ceil() as Millis
                } else {
                    Millis::MAX
                };
                Some(by_time.min(by_tokens).max(1))
            }
        }
    }

    /// Level after a slice expires without the turn finishing.
    pub fn on_slice_expired(&self, level: u8) -> u8 {
        match self.kind {
            PolicyKind::Mlfq => (level + 1).min(LEVELS as u8 - 1),
            _ => level,
        }
    }

    /// Move every queued turn to the top queue, ordered by arrival. Returns
    /// the number of turns promoted from lower queues.
    pub fn boost(&mut self) -> Vec<TurnId> {
        if self.kind != PolicyKind::Mlfq {
            return Vec::new();
        }
        let promoted: Vec<TurnId> = self.queues[1..].iter().flatten().map(|e| e.turn).collect();
        let mut all: Vec<QueueEntry> = self.queues.iter_mut().flat_map(|q| q.drain(..)).collect();
        all.sort_by_key(|e| (e.arrival, e.turn));
        self.queues[0] = all.into();
        promoted
    }
}
