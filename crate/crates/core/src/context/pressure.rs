use std::fmt::Write as _;

use super::session::Session;

pub const PRESSURE_HEADER: &str = "[context-pressure]";

/// Fixed-format utilization block meant for the agent's system prompt.
pub fn pressure_report(s: &Session) -> String {
    let used = s.window.used();
    let limit = s.limit();
    let pct = if limit > 0 { 100.0 * used as f64 / limit as f64 } else { 0.0 };
    let mut out = String::new();
    let _ = writeln!(out, "{PRESSURE_HEADER}");
    let _ = writeln!(out, "used_tokens: {used}");
    let _ = writeln!(out, "limit_tokens: {limit}");
    let _ = writeln!(out, "utilization_pct: {pct:.1}");
    let _ = writeln!(out, "tier1_records: {}", s.tier1.len());
    let _ = writeln!(out, "tier2_records: {}", s.tier2.len());
    let _ = writeln!(out, "compactions: {}", s.counters.compactions);
    out
}
