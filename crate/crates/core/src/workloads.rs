//! Seeded generators for scheduling scenarios and context sessions.

use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::message::Message;
use crate::domain::{Turn, TurnClass};
use crate::sim::{Millis, SeededRng};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload config: {0}")]
    ConfigInvalid(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, WorkloadError> {
    Err(WorkloadError::ConfigInvalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HangProfile {
    Constant { p: f64 },
    /// Sinusoid between `min_p` and `max_p`, starting at the minimum.
    Oscillating { min_p: f64, max_p: f64, period_ms: Millis },
}

impl HangProfile {
    pub fn rate_at(&self, t: Millis) -> f64 {
        match *self {
            HangProfile::Constant { p } => p,
            HangProfile::Oscillating { min_p, max_p, period_ms } => {
                let phase = 2.0 * std::f64::consts::PI * t as f64 / period_ms as f64;
                min_p + (max_p - min_p) * 0.5 * (1.0 - phase.cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProfile {
    /// Arrivals spread uniformly over the scenario duration.
    Uniform,
    /// All arrivals packed into the first `window_ms`.
    Burst { window_ms: Millis },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceDist {
    pub median_ms: f64,
    pub sigma: f64,
    pub min_ms: Millis,
    pub max_ms: Millis,
}

impl Default for ServiceDist {
    fn default() -> Self {
        Self { median_ms: 3000.0, sigma: 0.6, min_ms: 500, max_ms: 30_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_turns: usize,
    pub n_agents: usize,
    pub hang: HangProfile,
    pub arrival: ArrivalProfile,
    pub duration_ms: Millis,
    pub lanes: usize,
    /// Interactive, sub-agent, background.
    pub class_mix: [f64; 3],
    pub service: ServiceDist,
    /// Uniform range of how long an unreaped hang lasts.
    pub hang_timeout_ms: (Millis, Millis),
    /// Uniform range of work done before a hanging call stalls.
    pub hang_onset_ms: (Millis, Millis),
    /// Uniform range of tokens consumed per second of service.
    pub tokens_per_sec: (f64, f64),
    /// Probability that a hang is also reported as a rate-limit event.
    pub rate_limit_coupling: f64,
    /// Admission ceiling in turns per minute for policies with admission
    /// control.
    pub rate_limit_per_min: f64,
}

impl ScenarioConfig {
    fn base(name: &str, n_turns: usize, n_agents: usize, hang: HangProfile, duration_ms: Millis) -> Self {
        Self {
            name: name.to_string(),
            n_turns,
            n_agents,
            hang,
            arrival: ArrivalProfile::Uniform,
            duration_ms,
            lanes: 4,
            class_mix: [0.5, 0.3, 0.2],
            service: ServiceDist::default(),
            hang_timeout_ms: (60_000, 150_000),
            hang_onset_ms: (0, 25_000),
            tokens_per_sec: (200.0, 600.0),
            rate_limit_coupling: 0.0,
            rate_limit_per_min: 60.0,
        }
    }

    pub fn normal() -> Self {
        Self::base("normal", 27, 3, HangProfile::Constant { p: 0.05 }, 270_000)
    }

    pub fn high_load() -> Self {
        let mut c = Self::base("high_load", 280, 10, HangProfile::Constant { p: 0.10 }, 240_000);
        c.rate_limit_per_min = 30.0;
        c
    }

    pub fn burst() -> Self {
        let mut c = Self::base("burst", 30, 3, HangProfile::Constant { p: 0.08 }, 3000);
        c.arrival = ArrivalProfile::Burst { window_ms: 3000 };
        c
    }

    pub fn faulty() -> Self {
        Self::base("faulty", 63, 5, HangProfile::Constant { p: 0.30 }, 240_000)
    }

    pub fn cascade() -> Self {
        let hang = HangProfile::Oscillating { min_p: 0.05, max_p: 0.40, period_ms: 300_000 };
        let mut c = Self::base("cascade", 149, 5, hang, 600_000);
        c.rate_limit_coupling = 0.5;
        c
    }

    pub const BUILTIN: [&'static str; 5] = ["normal", "high_load", "burst", "faulty", "cascade"];

    pub fn builtin(name: &str) -> Result<Self, WorkloadError> {
        match name.replace('-', "_").as_str() {
            "normal" => Ok(Self::normal()),
            "high_load" | "high" => Ok(Self::high_load()),
            "burst" => Ok(Self::burst()),
            "faulty" => Ok(Self::faulty()),
            "cascade" => Ok(Self::cascade()),
            _ => Err(WorkloadError::Unknown { kind: "scenario", name: name.to_string() }),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_turns == 0 {
            return invalid("n_turns must be positive");
        }
        if self.n_agents == 0 || self.lanes == 0 {
            return invalid("n_agents and lanes must be positive");
        }
        match self.hang {
            HangProfile::Constant { p } if !prob(p) => return invalid(format!("hang rate {p} outside [0, 1]")),
            HangProfile::Oscillating { min_p, max_p, period_ms }
                if !prob(min_p) || !prob(max_p) || min_p > max_p || period_ms == 0 =>
            {
                return invalid("oscillating hang profile needs 0 <= min_p <= max_p <= 1 and a period");
            }
            _ => {}
        }
        if !prob(self.rate_limit_coupling) {
            return invalid("rate_limit_coupling outside [0, 1]");
        }
        if self.class_mix.iter().any(|&f| !(f >= 0.0)) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return invalid("class_mix needs non-negative fractions with a positive sum");
        }
        let s = &self.service;
        if !(s.median_ms > 0.0) || !(s.sigma >= 0.0) || s.min_ms == 0 || s.min_ms > s.max_ms {
            return invalid("service distribution needs median > 0, sigma >= 0, 0 < min <= max");
        }
        if self.hang_timeout_ms.0 > self.hang_timeout_ms.1 || self.hang_onset_ms.0 > self.hang_onset_ms.1 {
            return invalid("empty hang range");
        }
        if !(self.tokens_per_sec.0 >= 0.0) || self.tokens_per_sec.0 > self.tokens_per_sec.1 {
            return invalid("empty tokens_per_sec range");
        }
        if !(self.rate_limit_per_min >= 1.0) {
            return invalid("rate_limit_per_min must be at least 1");
        }
        if self.duration_ms == 0 {
            return invalid("duration must be positive");
        }
        Ok(())
    }
}

fn pick_class(mix: &[f64; 3], u: f64) -> TurnClass {
    let total: f64 = mix.iter().sum();
    let mut acc = 0.0;
    for (c, f) in TurnClass::ALL.iter().zip(mix) {
        acc += f / total;
        if u < acc {
            return *c;
        }
    }
    TurnClass::Background
}

fn uniform_ms(rng: &mut impl Rng, (lo, hi): (Millis, Millis)) -> Millis {
    rng.gen_range(lo..=hi)
}

/// Turn list ordered by arrival, ids dense from 0.
///
/// Arrivals, classes and service times come from one substream and hang
/// draws from another, so changing the hang rate leaves arrivals untouched.
pub fn gen_scenario(config: &ScenarioConfig, seed: u64) -> Result<Vec<Turn>, WorkloadError> {
    config.validate()?;
    let rngs = SeededRng::new(seed);
    let mut arr = rngs.substream(SeededRng::ARRIVALS);
    let mut hang = rngs.substream(SeededRng::HANGS);
    let span = match config.arrival {
        ArrivalProfile::Uniform => config.duration_ms,
        ArrivalProfile::Burst { window_ms } => window_ms.max(1),
    };
    let service = LogNormal::new(config.service.median_ms.ln(), config.service.sigma)
        .map_err(|e| WorkloadError::ConfigInvalid(e.to_string()))?;

    let mut raw: Vec<(Millis, u32, TurnClass, Millis)> = (0..config.n_turns)
        .map(|_| {
            let t = arr.gen_range(0..span);
            let agent = arr.gen_range(0..config.n_agents) as u32;
            let class = pick_class(&config.class_mix, arr.gen());
            let d = (service.sample(&mut arr).round() as Millis).clamp(config.service.min_ms, config.service.max_ms);
            (t, agent, class, d)
        })
        .collect();
    raw.sort_by_key(|&(t, agent, _, _)| (t, agent));

    let turns = raw
        .into_iter()
        .enumerate()
        .map(|(i, (t, agent, class, d))| {
            let mut turn = Turn::new(i as u32, agent, class, t, d);
            turn.will_hang = hang.gen_bool(config.hang.rate_at(t));
            let onset = uniform_ms(&mut hang, config.hang_onset_ms);
            let timeout = uniform_ms(&mut hang, config.hang_timeout_ms);
            let coupled = hang.gen_bool(config.rate_limit_coupling);
            let rate = hang.gen_range(config.tokens_per_sec.0..=config.tokens_per_sec.1);
            if turn.will_hang {
                // The stall happens after `onset` of work; the nominal work
                // still has to be done once the call goes through.
                turn.hang_after = onset;
                turn.hang_timeout = timeout;
                turn.rate_limit_on_hang = coupled;
                turn.service_time = d + onset;
            }
            turn.tokens = (rate * turn.service_time as f64 / 1000.0).round() as u64;
            turn
        })
        .collect();
    Ok(turns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopicLayout {
    Single,
    /// Topics switch every `segment_messages` and cycle, so earlier topics
    /// come back.
    Cycling { n_topics: u32, segment_messages: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub name: String,
    pub n_turns: u32,
    pub n_messages: u32,
    pub total_tokens: u64,
    pub n_key_messages: u32,
    pub window: u64,
    pub topics: TopicLayout,
    pub token_median: f64,
    pub token_sigma: f64,
    pub token_bounds: (u64, u64),
}

impl SessionConfig {
    fn base(name: &str, n_turns: u32, total_tokens: u64, n_key: u32) -> Self {
        Self {
            name: name.to_string(),
            n_turns,
            n_messages: 2 * n_turns,
            total_tokens,
            n_key_messages: n_key,
            window: 50_000,
            topics: TopicLayout::Single,
            token_median: 450.0,
            token_sigma: 0.5,
            token_bounds: (50, 2000),
        }
    }

    pub fn turns50() -> Self {
        Self::base("50turn", 50, 51_000, 13)
    }

    pub fn turns100() -> Self {
        Self::base("100turn", 100, 105_000, 27)
    }

    pub fn turns200() -> Self {
        Self::base("200turn", 200, 202_000, 47)
    }

    pub fn multitopic() -> Self {
        let mut c = Self::base("multitopic", 120, 116_000, 35);
        c.topics = TopicLayout::Cycling { n_topics: 4, segment_messages: 30 };
        c
    }

    pub const BUILTIN: [&'static str; 4] = ["50turn", "100turn", "200turn", "multitopic"];

    pub fn builtin(name: &str) -> Result<Self, WorkloadError> {
        match name.replace(['-', '_'], "").as_str() {
            "50turn" | "50" => Ok(Self::turns50()),
            "100turn" | "100" => Ok(Self::turns100()),
            "200turn" | "200" => Ok(Self::turns200()),
            "multitopic" => Ok(Self::multitopic()),
            _ => Err(WorkloadError::Unknown { kind: "session", name: name.to_string() }),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.n_key_messages > self.n_messages {
            return invalid("more key messages than messages");
        }
        let (lo, hi) = self.token_bounds;
        if lo == 0 || lo > hi {
            return invalid("token bounds need 0 < min <= max");
        }
        if self.n_messages > 0 {
            let n = self.n_messages as u64;
            if self.total_tokens < n * lo || self.total_tokens > n * hi {
                return invalid("total_tokens unreachable within token bounds");
            }
        }
        if self.window == 0 {
            return invalid("window must be positive");
        }
        if !(self.token_median > 0.0) || !(self.token_sigma >= 0.0) {
            return invalid("token distribution needs median > 0 and sigma >= 0");
        }
        if let TopicLayout::Cycling { n_topics, segment_messages } = self.topics {
            if n_topics == 0 || segment_messages == 0 {
                return invalid("cycling topics need at least one topic and segment length");
            }
        }
        Ok(())
    }

    pub fn topic_of(&self, seq: u32) -> u32 {
        match self.topics {
            TopicLayout::Single => 0,
            TopicLayout::Cycling { n_topics, segment_messages } => (seq / segment_messages) % n_topics,
        }
    }
}

/// Scale `sizes` so they sum to exactly `target`, staying within bounds.
fn rescale(sizes: &mut [u64], target: u64, (lo, hi): (u64, u64)) {
    let sum: u64 = sizes.iter().sum();
    let f = target as f64 / sum as f64;
    for s in sizes.iter_mut() {
        *s = ((*s as f64 * f).round() as u64).clamp(lo, hi);
    }
    let mut sum: u64 = sizes.iter().sum();
    let mut i = 0;
    let mut stuck = 0;
    while sum != target && stuck < sizes.len() {
        let s = &mut sizes[i % sizes.len()];
        if sum < target && *s < hi {
            *s += 1;
            sum += 1;
            stuck = 0;
        } else if sum > target && *s > lo {
            *s -= 1;
            sum -= 1;
            stuck = 0;
        } else {
            stuck += 1;
        }
        i += 1;
    }
}

/// Key message positions spread over the whole session with some jitter.
fn key_positions(rng: &mut impl Rng, n: u32, k: u32) -> Vec<u32> {
    if k == 0 {
        return Vec::new();
    }
    let gap = n as f64 / k as f64;
    let jitter = (gap / 4.0).floor() as i64;
    let mut out: Vec<u32> = Vec::with_capacity(k as usize);
    for j in 0..k {
        let centre = ((j as f64 + 0.5) * gap).floor() as i64;
        let d = if jitter > 0 { rng.gen_range(-jitter..=jitter) } else { 0 };
        let mut p = (centre + d).clamp(0, n as i64 - 1) as u32;
        while out.contains(&p) {
            p = (p + 1) % n;
        }
        out.push(p);
    }
    out.sort_unstable();
    out
}

pub fn gen_session(config: &SessionConfig, seed: u64) -> Result<Vec<Message>, WorkloadError> {
    config.validate()?;
    let n = config.n_messages;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = SeededRng::new(seed).substream(SeededRng::SESSION);
    let size = LogNormal::new(config.token_median.ln(), config.token_sigma)
        .map_err(|e| WorkloadError::ConfigInvalid(e.to_string()))?;
    let (lo, hi) = config.token_bounds;
    let mut tokens: Vec<u64> = (0..n).map(|_| (size.sample(&mut rng).round() as u64).clamp(lo, hi)).collect();
    rescale(&mut tokens, config.total_tokens, config.token_bounds);

    let keys = key_positions(&mut rng, n, config.n_key_messages);
    let beta = Beta::new(2.0, 5.0).expect("fixed shape parameters are valid");
    let msgs = (0..n)
        .map(|seq| {
            let m = Message::new(seq, tokens[seq as usize]).with_topic(config.topic_of(seq));
            if keys.binary_search(&seq).is_ok() {
                m.key(rng.gen_range(0.5..=1.0))
            } else {
                m.with_importance(beta.sample(&mut rng))
            }
        })
        .collect();
    Ok(msgs)
}
