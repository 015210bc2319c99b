use serde::{Deserialize, Serialize};

use super::message::Message;

/// Weights of the compaction value score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ValueWeights {
    fn default() -> Self {
        Self { alpha: 0.3, beta: 0.4, gamma: 0.3 }
    }
}

/// `α·recency + β·importance + γ·key`, recency being
/// `(turn_index + 1) / (now_index + 1)`.
pub fn value(m: &Message, now_index: u32, w: &ValueWeights) -> f64 {
    let recency = (m.turn_index as f64 + 1.0) / (now_index as f64 + 1.0);
    let key = if m.is_key { 1.0 } else { 0.0 };
    w.alpha * recency + w.beta * m.importance + w.gamma * key
}
