//! Context lifecycle: tiered memory, compaction policies, hibernation.

pub mod compaction;
pub mod hibernate;
pub mod message;
pub mod pressure;
pub mod session;
pub mod value;
pub mod window;

use thiserror::Error;

pub use compaction::{compact_clm, compact_memgpt, CompactionOutcome, CompactionParams};
pub use hibernate::{hibernate, restore};
pub use message::{Message, MessageId, Role, Topic};
pub use pressure::pressure_report;
pub use session::{run_session, ContextParams, ContextPolicy, Counters, InjectRecord, Session};
pub use value::{value, ValueWeights};
pub use window::{summarize_stub, ContextWindow, Entry, Summary, SummaryId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error("session is hibernated")]
    SessionHibernated,
    #[error("entry of {tokens} tokens cannot fit a {limit}-token window")]
    CannotFit { tokens: u64, limit: u64 },
    #[error("hibernation image checksum mismatch")]
    ChecksumMismatch,
    #[error("hibernation image version {0} is not supported")]
    VersionUnsupported(u32),
    #[error("malformed hibernation image: {0}")]
    Malformed(String),
}
