use serde::{Deserialize, Serialize};

pub type MessageId = u32;
pub type Topic = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

/// One conversation message. Content is not modelled, only its size and
/// how much it matters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    /// Position in the session, 0-based.
    pub seq: u32,
    /// Conversation turn the message belongs to (two messages per turn).
    pub turn_index: u32,
    pub role: Role,
    pub tokens: u64,
    /// In `[0, 1]`.
    pub importance: f64,
    /// Carries structured data, a decision or a commitment.
    pub is_key: bool,
    pub topic: Topic,
}

impl Message {
    pub fn new(seq: u32, tokens: u64) -> Self {
        Self {
            id: seq,
            seq,
            turn_index: seq / 2,
            role: if seq.is_multiple_of(2) { Role::User } else { Role::Assistant },
            tokens,
            importance: 0.0,
            is_key: false,
            topic: 0,
        }
    }

    pub fn key(mut self, importance: f64) -> Self {
        self.is_key = true;
        self.importance = importance;
        self
    }

    pub fn with_importance(mut self, importance: f64) -> Self {
        self.importance = importance;
        self
    }

    pub fn with_topic(mut self, topic: Topic) -> Self {
        self.topic = topic;
        self
    }
}
