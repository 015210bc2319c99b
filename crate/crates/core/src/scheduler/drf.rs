//! Dominant Resource Fairness bookkeeping.

use std::collections::BTreeMap;

use crate::domain::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Resource {
    Lanes,
    TokensPerMin,
    ContextTokens,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Lanes, Resource::TokensPerMin, Resource::ContextTokens];

    fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrfLedger {
    capacity: [f64; 3],
    usage: BTreeMap<AgentId, [f64; 3]>,
}

impl DrfLedger {
    pub fn new(lanes: f64, tokens_per_min: f64, context_tokens: f64) -> Self {
        Self { capacity: [lanes, tokens_per_min, context_tokens], usage: BTreeMap::new() }
    }

    pub fn add(&mut self, agent: AgentId, r: Resource, amount: f64) {
        let u = self.usage.entry(agent).or_insert([0.0; 3]);
        u[r.idx()] = (u[r.idx()] + amount).max(0.0);
    }

    pub fn set(&mut self, agent: AgentId, r: Resource, amount: f64) {
        self.usage.entry(agent).or_insert([0.0; 3])[r.idx()] = amount.max(0.0);
    }

    pub fn usage(&self, agent: AgentId, r: Resource) -> f64 {
        self.usage.get(&agent).map_or(0.0, |u| u[r.idx()])
    }

    /// `max_r usage[r] / capacity[r]`, clamped to `[0, 1]`.
    pub fn dominant_share(&self, agent: AgentId) -> f64 {
        let Some(u) = self.usage.get(&agent) else { return 0.0 };
        u.iter()
            .zip(self.capacity.iter())
            .filter(|(_, &c)| c > 0.0)
            .map(|(&x, &c)| x / c)
            .fold(0.0, f64::max)
            .clamp(0.0, 1.0)
    }
}
