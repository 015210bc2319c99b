//! Report rows computed from event logs, plus aggregation over seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::context::pressure::PRESSURE_HEADER;
use crate::context::Session;
use crate::domain::TurnId;
use crate::scheduler::{EventRecord, Transition};
use crate::sim::Millis;

pub const STARVATION_MS: Millis = 60_000;
pub const LAG_MS: Millis = 30_000;

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it.
pub fn percentile_nearest_rank(values: &[Millis], p: f64) -> Option<Millis> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SchedulingReport {
    pub p95_latency_ms: f64,
    pub throughput_per_min: f64,
    pub zombies: f64,
    pub avg_hold_s: f64,
    pub lane_waste_s: f64,
    pub recovered: f64,
    pub starved: f64,
    pub lags_over_30s: f64,
}

impl SchedulingReport {
    pub const COLUMNS: [&'static str; 8] = [
        "P95 (ms)",
        "Tput (/min)",
        "Zombies",
        "Avg Hold (s)",
        "Lane Waste (s)",
        "Recovered",
        "Starved",
        "Lags>30s",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.p95_latency_ms,
            self.throughput_per_min,
            self.zombies,
            self.avg_hold_s,
            self.lane_waste_s,
            self.recovered,
            self.starved,
            self.lags_over_30s,
        ]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self {
            p95_latency_ms: v[0],
            throughput_per_min: v[1],
            zombies: v[2],
            avg_hold_s: v[3],
            lane_waste_s: v[4],
            recovered: v[5],
            starved: v[6],
            lags_over_30s: v[7],
        }
    }
}

#[derive(Debug, Default, Clone)]
struct TurnTimes {
    arrival: Option<Millis>,
    first_enqueue: Option<Millis>,
    first_dispatch: Option<Millis>,
    end: Option<(Millis, bool)>,
}

/// Every column of a scheduling table row, from one run's event log.
pub fn compute_sched(log: &[EventRecord]) -> SchedulingReport {
    let mut turns: BTreeMap<TurnId, TurnTimes> = BTreeMap::new();
    let mut zombies = 0u64;
    let mut waste_ms = 0u64;
    let mut recovered = 0u64;
    for r in log {
        let Some(id) = r.turn else { continue };
        let tt = turns.entry(id).or_default();
        match &r.transition {
            Transition::Arrived => tt.arrival = Some(r.t),
            Transition::Enqueued => {
                tt.first_enqueue.get_or_insert(r.t);
            }
            Transition::Dispatched => {
                tt.first_dispatch.get_or_insert(r.t);
            }
            Transition::Completed => tt.end = Some((r.t, true)),
            Transition::Reaped | Transition::TimedOut => tt.end = Some((r.t, false)),
            Transition::Recovered => recovered += 1,
            Transition::Zombie { hang_start, .. } => {
                zombies += 1;
                waste_ms += r.t - hang_start;
            }
            _ => {}
        }
    }

    let mut responses = Vec::new();
    let mut completed = 0u64;
    let mut first_arrival = Millis::MAX;
    let mut last_end = 0;
    let mut starved = 0u64;
    for tt in turns.values() {
        if let (Some(q), Some(d)) = (tt.first_enqueue, tt.first_dispatch) {
            if d - q > STARVATION_MS {
                starved += 1;
            }
        }
        let (Some(a), Some((end, ok))) = (tt.arrival, tt.end) else { continue };
        responses.push(end - a);
        completed += ok as u64;
        first_arrival = first_arrival.min(a);
        last_end = last_end.max(end);
    }
    let minutes = last_end.saturating_sub(first_arrival) as f64 / 60_000.0;
    let waste_s = waste_ms as f64 / 1000.0;
    SchedulingReport {
        p95_latency_ms: percentile_nearest_rank(&responses, 95.0).unwrap_or(0) as f64,
        throughput_per_min: if minutes > 0.0 { completed as f64 / minutes } else { 0.0 },
        zombies: zombies as f64,
        avg_hold_s: if zombies > 0 { waste_s / zombies as f64 } else { 0.0 },
        lane_waste_s: waste_s,
        recovered: recovered as f64,
        starved: starved as f64,
        lags_over_30s: responses.iter().filter(|&&r| r > LAG_MS).count() as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextReport {
    /// Mean window fill, as a fraction of the limit.
    pub utilization: f64,
    /// Fraction of key messages represented in the window at the end.
    pub retention: f64,
    pub quality: f64,
    pub compact_cost: f64,
}

impl ContextReport {
    pub const COLUMNS: [&'static str; 4] = ["Utilization", "Retention", "Quality", "Compact Cost"];

    pub fn values(&self) -> [f64; 4] {
        [self.utilization, self.retention, self.quality, self.compact_cost]
    }

    pub fn from_values(v: [f64; 4]) -> Self {
        Self { utilization: v[0], retention: v[1], quality: v[2], compact_cost: v[3] }
    }
}

pub const QUALITY_CEILING: f64 = 0.95;
pub const OVERFLOW_PENALTY: f64 = 0.30;
pub const ADJACENCY_PENALTY: f64 = 0.10;

/// Fraction of neighbouring transcript pairs where exactly one side was
/// dropped with nothing summarizing it.
pub fn broken_adjacency_fraction(s: &Session) -> f64 {
    if s.tier2.len() < 2 {
        return 0.0;
    }
    let broken = s
        .tier2
        .windows(2)
        .filter(|w| s.dropped.contains(&w[0].id) != s.dropped.contains(&w[1].id))
        .count();
    broken as f64 / (s.tier2.len() - 1) as f64
}

pub fn compute_ctx(s: &Session) -> ContextReport {
    let c = &s.counters;
    let n = c.injections as f64;
    let keys = s.key_ids();
    let retention = if keys.is_empty() {
        1.0
    } else {
        let present = s.window.represented_keys();
        keys.iter().filter(|k| present.contains(k)).count() as f64 / keys.len() as f64
    };
    let overflow = if n > 0.0 { c.overflows as f64 / n } else { 0.0 };
    let quality = (QUALITY_CEILING - OVERFLOW_PENALTY * overflow - ADJACENCY_PENALTY * broken_adjacency_fraction(s))
        .clamp(0.0, QUALITY_CEILING);
    ContextReport {
        utilization: if n > 0.0 { c.utilization_sum / n } else { 0.0 },
        retention,
        quality,
        compact_cost: c.compact_cost as f64,
    }
}

/// Numbers read back from a pressure block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pressure {
    pub used_tokens: u64,
    pub limit_tokens: u64,
    pub utilization_pct: f64,
    pub tier1_records: u64,
    pub tier2_records: u64,
    pub compactions: u64,
}

pub fn parse_pressure(block: &str) -> Option<Pressure> {
    let mut lines = block.lines();
    if lines.next()? != PRESSURE_HEADER {
        return None;
    }
    let mut p = Pressure::default();
    let mut seen = 0;
    for line in lines {
        let (k, v) = line.split_once(": ")?;
        match k {
            "used_tokens" => p.used_tokens = v.parse().ok()?,
            "limit_tokens" => p.limit_tokens = v.parse().ok()?,
            "utilization_pct" => p.utilization_pct = v.parse().ok()?,
            "tier1_records" => p.tier1_records = v.parse().ok()?,
            "tier2_records" => p.tier2_records = v.parse().ok()?,
            "compactions" => p.compactions = v.parse().ok()?,
            _ => return None,
        }
        seen += 1;
    }
    (seen == 6).then_some(p)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stddev = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, stddev }
    }
}

/// Column-wise mean ± stddev over rows of `N` values.
pub fn aggregate<const N: usize>(rows: &[[f64; N]]) -> [Stat; N] {
    std::array::from_fn(|i| Stat::of(&rows.iter().map(|r| r[i]).collect::<Vec<_>>()))
}

fn fmt_value(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.0}")
    } else {
        format!("{x:.3}")
    }
}

pub fn csv_header(first: &[&str], columns: &[&str]) -> String {
    first.iter().chain(columns).map(|c| csv_field(c)).collect::<Vec<_>>().join(",")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_row(first: &[String], values: &[f64]) -> String {
    first
        .iter()
        .map(|s| csv_field(s))
        .chain(values.iter().map(|&v| fmt_value(v)))
        .collect::<Vec<_>>()
        .join(",")
}

/// Aligned plain-text table of `label | mean ± sd ...` rows.
pub fn render_table(title: &str, columns: &[&str], rows: &[(String, Vec<Stat>)]) -> String {
    let mut cells: Vec<Vec<String>> = vec![std::iter::once("Method".to_string())
        .chain(columns.iter().map(|c| c.to_string()))
        .collect()];
    for (label, stats) in rows {
        let mut r = vec![label.clone()];
        for s in stats {
            if s.stddev == 0.0 {
                r.push(fmt_value(s.mean));
            } else {
                let digits = if s.mean.abs() < 10.0 { 3 } else { 1 };
                r.push(format!("{:.*} ± {:.*}", digits, s.mean, digits, s.stddev));
            }
        }
        cells.push(r);
    }
    let ncol = cells[0].len();
    let widths: Vec<usize> =
        (0..ncol).map(|i| cells.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    for (ri, r) in cells.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  "));
        if ri == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (ncol - 1)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_small_samples() {
        assert_eq!(percentile_nearest_rank(&[], 95.0), None);
        assert_eq!(percentile_nearest_rank(&[7], 95.0), Some(7));
        let v: Vec<Millis> = (1..=20).collect();
        assert_eq!(percentile_nearest_rank(&v, 95.0), Some(19));
        let v: Vec<Millis> = (1..=100).rev().collect();
        assert_eq!(percentile_nearest_rank(&v, 95.0), Some(95));
    }

    #[test]
    fn stat_matches_hand_computation() {
        let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.stddev - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[3.0]).stddev, 0.0);
    }

    #[test]
    fn pressure_block_round_trip() {
        use crate::context::{pressure_report, ContextParams, ContextPolicy, Message};
        let mut s = Session::new(ContextPolicy::Clm, 50_000, ContextParams::default());
        let fresh = parse_pressure(&pressure_report(&s)).unwrap();
        assert_eq!(fresh.utilization_pct, 0.0);
        assert_eq!(fresh.tier1_records + fresh.tier2_records, 0);
        s.inject(Message::new(0, 25_000)).unwrap();
        let p = parse_pressure(&pressure_report(&s)).unwrap();
        assert_eq!((p.used_tokens, p.limit_tokens, p.utilization_pct, p.tier2_records), (25_000, 50_000, 50.0, 1));
        assert!(pressure_report(&s).contains("utilization_pct: 50.0\n"));
        assert_eq!(parse_pressure("nonsense"), None);
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        assert_eq!(csv_row(&["a,b".into()], &[1.0, 2.5]), "\"a,b\",1,2.500");
    }
}
