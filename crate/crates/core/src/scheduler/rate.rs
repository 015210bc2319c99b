//! Admission control: a token bucket per model API combined with an AIMD
//! limit on admissions per sliding window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sim::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenBucket {
    capacity: f64,
    level: f64,
    /// Tokens per second.
    refill_rate: f64,
    last_refill: Millis,
}

impl TokenBucket {
    /// Starts full.
    pub fn new(capacity: f64, refill_rate: f64) -> Self {
        assert!(capacity >= 1.0 && refill_rate > 0.0, "bucket must be able to admit");
        Self { capacity, level: capacity, refill_rate, last_refill: 0 }
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level.clamp(0.0, self.capacity);
        self
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn refill(&mut self, now: Millis) {
        if now > self.last_refill {
            let added = self.refill_rate * (now - self.last_refill) as f64 / 1000.0;
            self.level = (self.level + added).min(self.capacity);
            self.last_refill = now;
        }
    }

    pub fn try_take(&mut self, now: Millis) -> bool {
        self.refill(now);
        if self.level >= 1.0 {
            self.level -= 1.0;
            true
        } else {
            false
        }
    }

    /// Milliseconds until one whole token is available.
    pub fn wait_for_token(&mut self, now: Millis) -> Millis {
        self.refill(now);
        if self.level >= 1.0 {
            0
        } else {
            ((1.0 - self.level) * 1000.0 / self.refill_rate).ceil() as Millis
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitChange {
    Decrease,
    Increase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AimdParams {
    /// Admissions per minute at start, and the ceiling for recovery.
    pub initial_limit: f64,
    pub floor: f64,
    pub additive_step: f64,
    pub multiplicative_factor: f64,
    /// Length of one quiet interval for additive increase.
    pub interval_ms: Millis,
}

impl Default for AimdParams {
    fn default() -> Self {
        Self {
            initial_limit: 60.0,
            floor: 5.0,
            additive_step: 2.0,
            multiplicative_factor: 0.5,
            interval_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AimdController {
    params: AimdParams,
    current_limit: f64,
    event_in_interval: bool,
    history: Vec<(Millis, f64, LimitChange)>,
}

impl AimdController {
    pub fn new(params: AimdParams) -> Self {
        assert!(params.floor > 0.0 && params.floor <= params.initial_limit);
        assert!(params.multiplicative_factor > 0.0 && params.multiplicative_factor < 1.0);
        Self { current_limit: params.initial_limit, params, event_in_interval: false, history: Vec::new() }
    }

    pub fn with_limit(mut self, limit: f64) -> Self {
        self.current_limit = limit.max(self.params.floor);
        self
    }

    pub fn params(&self) -> &AimdParams {
        &self.params
    }

    pub fn current_limit(&self) -> f64 {
        self.current_limit
    }

    /// Every change with its cause, in time order.
    pub fn history(&self) -> &[(Millis, f64, LimitChange)] {
        &self.history
    }

    pub fn on_rate_limit_event(&mut self, now: Millis) {
        self.event_in_interval = true;
        let next = (self.current_limit * self.params.multiplicative_factor).max(self.params.floor);
        if next != self.current_limit {
            self.current_limit = next;
            self.history.push((now, next, LimitChange::Decrease));
        }
    }

    /// Called once per interval; adds one step if the interval was quiet.
    pub fn on_interval(&mut self, now: Millis) {
        if !std::mem::take(&mut self.event_in_interval) {
            let next = (self.current_limit + self.params.additive_step).min(self.params.initial_limit);
            if next != self.current_limit {
                self.current_limit = next;
                self.history.push((now, next, LimitChange::Increase));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissionParams {
    pub bucket_capacity: f64,
    /// Tokens per second.
    pub refill_rate: f64,
    pub window_ms: Millis,
    pub aimd: AimdParams,
}

impl Default for AdmissionParams {
    fn default() -> Self {
        Self { bucket_capacity: 20.0, refill_rate: 1.0, window_ms: 60_000, aimd: AimdParams::default() }
    }
}

/// Outcome of offering a turn for admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    /// Re-offer at this absolute time.
    Deferred { retry_at: Millis },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionController {
    pub bucket: TokenBucket,
    pub aimd: AimdController,
    window_ms: Millis,
    admitted: VecDeque<Millis>,
    rejections: u64,
}

impl AdmissionController {
    pub fn new(params: &AdmissionParams) -> Self {
        Self {
            bucket: TokenBucket::new(params.bucket_capacity, params.refill_rate),
            aimd: AimdController::new(params.aimd),
            window_ms: params.window_ms,
            admitted: VecDeque::new(),
            rejections: 0,
        }
    }

    fn expire(&mut self, now: Millis) {
        while let Some(&t) = self.admitted.front() {
            if t + self.window_ms <= now {
                self.admitted.pop_front();
            } else {
                break;
            }
        }
    }

    /// Admissions allowed per window under the current AIMD limit.
    pub fn window_allowance(&self) -> usize {
        (self.aimd.current_limit() * self.window_ms as f64 / 60_000.0).floor().max(1.0) as usize
    }

    pub fn admitted_in_window(&mut self, now: Millis) -> usize {
        self.expire(now);
        self.admitted.len()
    }

    pub fn rejections(&self) -> u64 {
        self.rejections
    }

    pub fn offer(&mut self, now: Millis) -> Admission {
        self.expire(now);
        let allowance = self.window_allowance();
        let window_wait = if self.admitted.len() >= allowance {
            // The slot frees when the oldest admission that keeps us at the
            // limit leaves the window.
            let idx = self.admitted.len() - allowance;
            self.admitted[idx] + self.window_ms - now
        } else {
            0
        };
        let token_wait = self.bucket.wait_for_token(now);
        if window_wait == 0 && token_wait == 0 {
            let took = self.bucket.try_take(now);
            debug_assert!(took);
            self.admitted.push_back(now);
            Admission::Accepted
        } else {
            self.rejections += 1;
            Admission::Deferred { retry_at: now + window_wait.max(token_wait).max(1) }
        }
    }
}
