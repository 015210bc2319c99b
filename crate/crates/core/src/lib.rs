pub mod cli;
pub mod config;
pub mod context;
pub mod domain;
pub mod metrics;
pub mod persistence;
pub mod scheduler;
pub mod sim;
pub mod workloads;
