//! Lane scheduling: policies, admission control and the simulation engine.

pub mod drf;
pub mod engine;
pub mod policy;
pub mod rate;

pub use engine::{simulate, EventRecord, ReaperParams, SchedParams, SimOutcome, Transition};
pub use policy::{MlfqParams, Policy, PolicyKind};
