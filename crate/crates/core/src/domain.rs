//! Shared vocabulary: turns, lanes, agents and zombie records.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Millis;

/// A hanging turn becomes a zombie once it has held its lane strictly longer
/// than this.
pub const ZOMBIE_THRESHOLD_MS: Millis = 30_000;

pub type TurnId = u32;
pub type AgentId = u32;
pub type LaneId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("turn {0} does not hold a lane")]
    NotHoldingLane(TurnId),
    #[error("turn {0} has not reached a terminal state")]
    NotTerminal(TurnId),
    #[error("lane pool exhausted ({0} lanes)")]
    NoFreeLane(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnClass {
    Interactive,
    SubAgent,
    Background,
}

impl TurnClass {
    pub const ALL: [TurnClass; 3] = [TurnClass::Interactive, TurnClass::SubAgent, TurnClass::Background];

    /// Initial feedback-queue level.
    pub fn initial_level(self) -> u8 {
        match self {
            TurnClass::Interactive => 0,
            TurnClass::SubAgent => 1,
            TurnClass::Background => 2,
        }
    }

    /// Default priority weight in the weighted response-time objective.
    pub fn default_weight(self) -> f64 {
        match self {
            TurnClass::Interactive => 4.0,
            TurnClass::SubAgent => 2.0,
            TurnClass::Background => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Terminated by the reaper after a failed retry.
    Reaped,
    /// Hung until its own timeout expired.
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnState {
    /// Arrived but not yet admitted (deferred by admission control).
    Pending,
    Queued,
    Running,
    Hanging,
    Completed,
    Failed(FailureKind),
}

impl TurnState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TurnState::Completed | TurnState::Failed(_))
    }
}

/// One unit of agent work.
///
/// `will_hang` is drawn at generation time but is never consulted by a
/// scheduling policy; the engine only reveals it when the turn reaches its
/// hang point while running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub id: TurnId,
    pub agent_id: AgentId,
    pub class: TurnClass,
    pub arrival: Millis,
    /// Nominal duration of useful work.
    pub service_time: Millis,
    pub weight: f64,
    pub will_hang: bool,
    /// Work executed before the call stalls (only meaningful if `will_hang`).
    pub hang_after: Millis,
    /// How long an unreaped hang lasts before it fails on its own.
    pub hang_timeout: Millis,
    /// Whether the hang is also reported upstream as a rate-limit response.
    pub rate_limit_on_hang: bool,
    pub tokens: u64,
    pub state: TurnState,
    pub queue_level: u8,
    pub enqueue_time: Option<Millis>,
    pub start_time: Option<Millis>,
    pub finish_time: Option<Millis>,
}

impl Turn {
    pub fn new(id: TurnId, agent_id: AgentId, class: TurnClass, arrival: Millis, service_time: Millis) -> Self {
        Self {
            id,
            agent_id,
            class,
            arrival,
            service_time,
            weight: class.default_weight(),
            will_hang: false,
            hang_after: 0,
            hang_timeout: 0,
            rate_limit_on_hang: false,
            tokens: 0,
            state: TurnState::Queued,
            queue_level: class.initial_level(),
            enqueue_time: Some(arrival),
            start_time: None,
            finish_time: None,
        }
    }

    /// Lane held while hanging for strictly more than the zombie threshold.
    /// `start_time` is the instant the current lane was acquired.
    pub fn classify_zombie(&self, now: Millis) -> Result<bool, DomainError> {
        let started = match (self.state, self.start_time) {
            (TurnState::Running | TurnState::Hanging, Some(s)) => s,
            _ => return Err(DomainError::NotHoldingLane(self.id)),
        };
        Ok(self.state == TurnState::Hanging && now.saturating_sub(started) > ZOMBIE_THRESHOLD_MS)
    }

    /// `finish - arrival`, defined for terminal turns only.
    pub fn response_time(&self) -> Result<Millis, DomainError> {
        match (self.state.is_terminal(), self.finish_time) {
            (true, Some(f)) => Ok(f - self.arrival),
            _ => Err(DomainError::NotTerminal(self.id)),
        }
    }

    pub fn weighted_response(&self) -> Result<f64, DomainError> {
        Ok(self.weight * self.response_time()? as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneHold {
    pub lane: LaneId,
    pub turn: TurnId,
    pub acquired_at: Millis,
}

/// Fixed set of `capacity` execution slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanePool {
    capacity: usize,
    slots: Vec<Option<LaneHold>>,
    acquires: u64,
    releases: u64,
}

impl LanePool {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, slots: vec![None; capacity], acquires: 0, releases: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupied(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn free(&self) -> usize {
        self.capacity - self.occupied()
    }

    pub fn holds(&self) -> impl Iterator<Item = &LaneHold> {
        self.slots.iter().flatten()
    }

    /// Lowest-numbered free lane.
    pub fn acquire(&mut self, turn: TurnId, now: Millis) -> Result<LaneId, DomainError> {
        let idx = self
            .slots
            .iter()
            .position(Option::is_none)
            .ok_or(DomainError::NoFreeLane(self.capacity))?;
        let lane = idx as LaneId;
        self.slots[idx] = Some(LaneHold { lane, turn, acquired_at: now });
        self.acquires += 1;
        Ok(lane)
    }

    /// Idempotent: releasing a free lane (or one held by another turn) is a
    /// no-op returning `None`.
    pub fn release(&mut self, lane: LaneId, turn: TurnId) -> Option<LaneHold> {
        let slot = self.slots.get_mut(lane as usize)?;
        match slot {
            Some(h) if h.turn == turn => {
                self.releases += 1;
                slot.take()
            }
            _ => None,
        }
    }

    /// `acquires - releases == occupied`, the lane accounting identity.
    pub fn accounting_holds(&self) -> bool {
        self.acquires - self.releases == self.occupied() as u64
    }
}

/// Per-agent view: active turn and API call rate over a sliding window.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: AgentId,
    pub active_turn: Option<TurnId>,
    pub dominant_share: f64,
    window: Millis,
    calls: VecDeque<Millis>,
}

impl Agent {
    pub fn new(id: AgentId, window: Millis) -> Self {
        Self { id, active_turn: None, dominant_share: 0.0, window, calls: VecDeque::new() }
    }

    pub fn record_call(&mut self, now: Millis) {
        self.calls.push_back(now);
        self.expire(now);
    }

    fn expire(&mut self, now: Millis) {
        while let Some(&t) = self.calls.front() {
            if t + self.window <= now {
                self.calls.pop_front();
            } else {
                break;
            }
        }
    }

    /// Calls per minute over the trailing window.
    pub fn api_rate(&mut self, now: Millis) -> f64 {
        self.expire(now);
        self.calls.len() as f64 * 60_000.0 / self.window as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZombieOutcome {
    Recovered,
    Terminated,
}

/// One zombie episode.
///
/// `acquired_at` is when the lane was taken, `hold_start` when the hang began
/// and `hold_end` when the lane was released or the turn resumed. Wasted lane
/// time is `hold_end - hold_start`; the zombie condition is on
/// `detected_at - acquired_at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZombieRecord {
    pub turn_id: TurnId,
    pub acquired_at: Millis,
    pub detected_at: Millis,
    pub hold_start: Millis,
    pub hold_end: Millis,
    pub outcome: ZombieOutcome,
}

impl ZombieRecord {
    pub fn wasted_ms(&self) -> Millis {
        self.hold_end - self.hold_start
    }

    pub fn lane_hold_ms(&self) -> Millis {
        self.hold_end - self.acquired_at
    }

    pub fn is_valid(&self) -> bool {
        self.detected_at - self.acquired_at > ZOMBIE_THRESHOLD_MS
            && self.hold_start >= self.acquired_at
            && self.hold_end >= self.detected_at
    }
}

/// Sum of `w_t * R_t` over terminal turns.
pub fn weighted_objective<'a>(turns: impl IntoIterator<Item = &'a Turn>) -> f64 {
    turns.into_iter().filter_map(|t| t.weighted_response().ok()).sum()
}

/// Per-class counts, handy for reports and tests.
pub fn class_histogram<'a>(turns: impl IntoIterator<Item = &'a Turn>) -> BTreeMap<TurnClass, usize> {
    let mut m = BTreeMap::new();
    for t in turns {
        *m.entry(t.class).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hanging(start: Millis) -> Turn {
        let mut t = Turn::new(1, 0, TurnClass::Interactive, 0, 1000);
        t.state = TurnState::Hanging;
        t.start_time = Some(start);
        t
    }

    #[test]
    fn zombie_after_31s() {
        assert_eq!(hanging(0).classify_zombie(31_000), Ok(true));
    }

    #[test]
    fn zombie_boundary_is_strict() {
        assert_eq!(hanging(0).classify_zombie(30_000), Ok(false));
    }

    #[test]
    fn healthy_long_runner_is_not_zombie() {
        let mut t = hanging(0);
        t.state = TurnState::Running;
        assert_eq!(t.classify_zombie(600_000), Ok(false));
    }

    #[test]
    fn zombie_requires_lane() {
        let t = Turn::new(3, 0, TurnClass::Background, 0, 10);
        assert_eq!(t.classify_zombie(100_000), Err(DomainError::NotHoldingLane(3)));
    }

    #[test]
    fn response_time_cases() {
        let mut t = Turn::new(1, 0, TurnClass::Interactive, 0, 10);
        assert_eq!(t.response_time(), Err(DomainError::NotTerminal(1)));
        t.state = TurnState::Completed;
        t.finish_time = Some(4495);
        assert_eq!(t.response_time(), Ok(4495));
        t.arrival = 4495;
        assert_eq!(t.response_time(), Ok(0));
    }

    #[test]
    fn lane_pool_bounds_and_idempotent_release() {
        let mut p = LanePool::new(2);
        let a = p.acquire(1, 0).unwrap();
        let b = p.acquire(2, 0).unwrap();
        assert_eq!(p.acquire(3, 0), Err(DomainError::NoFreeLane(2)));
        assert!(p.release(a, 1).is_some());
        assert!(p.release(a, 1).is_none());
        assert!(p.release(b, 99).is_none());
        assert_eq!(p.occupied(), 1);
        assert!(p.accounting_holds());
    }

    #[test]
    fn agent_rate_sliding_window() {
        let mut a = Agent::new(0, 60_000);
        for t in [0, 10_000, 20_000] {
            a.record_call(t);
        }
        assert_eq!(a.api_rate(30_000), 3.0);
        assert_eq!(a.api_rate(65_000), 2.0);
    }
}
