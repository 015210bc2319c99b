//! Experiment runner: `run-sched`, `run-context` and `report`.
//!
//! A run directory holds `run.json` (what was run), `config.toml` (every
//! parameter), `events.log` (one JSON record per line, tagged with policy and
//! seed), `per_seed.csv`, `aggregate.csv` and `table.txt`. Context runs also
//! leave one `sessions/<id>/` directory per policy and seed with the cold
//! log, the warm store and the final hibernation image; `report` rebuilds
//! the tables from those files alone.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ConfigFile, ContextRunConfig, Override, SchedRunConfig};
use crate::context::{hibernate, restore, ContextError, ContextPolicy, InjectRecord, Session};
use crate::metrics::{aggregate, compute_ctx, compute_sched, csv_header, csv_row, render_table, ContextReport, SchedulingReport};
use crate::persistence::{read_jsonl, write_jsonl, ColdLog, Layout, PersistError, WarmRecord, WarmStore};
use crate::scheduler::{simulate, EventRecord, PolicyKind};
use crate::workloads::{gen_scenario, gen_session, WorkloadError};

pub const OUT_ENV: &str = "LANEWARD_OUT";

#[derive(Debug, Parser)]
#[command(name = "laneward", version, about = "Agent turn scheduling and context management simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scheduling scenario under one or all policies.
    RunSched {
        /// Built-in scenario (normal, high_load, burst, faulty, cascade) or a TOML file.
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Run a context session under one or all policies.
    RunContext {
        /// Built-in session (50turn, 100turn, 200turn, multitopic) or a TOML file.
        #[arg(long)]
        session: String,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Re-render the tables of a finished run from its stored logs.
    Report { run_dir: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Policy name, or `all`.
    #[arg(long, default_value = "all")]
    pub policy: String,
    /// First seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of consecutive seeds to run and aggregate.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// TOML file with [scenario]/[sched] or [session]/[context] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output root.
    #[arg(long, env = OUT_ENV, default_value = "laneward-out")]
    pub out: PathBuf,
    /// Parameter override, e.g. `sched.lanes=8`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Also write each seed's generated workload as JSON lines.
    #[arg(long)]
    pub dump_workload: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{0}")]
    Context(#[from] ContextError),
    #[error("{0} is not a run directory (no run.json)")]
    NotARun(PathBuf),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        CliError::Config(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Persist(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => 3,
            CliError::Config(_) | CliError::NotARun(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Sched,
    Context,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub kind: RunKind,
    pub run_id: String,
    pub workload: String,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    /// Session directory names, by policy then seed (context runs).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sessions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SchedLine {
    policy: PolicyKind,
    seed: u64,
    #[serde(flatten)]
    record: EventRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ContextLine {
    policy: ContextPolicy,
    seed: u64,
    #[serde(flatten)]
    record: InjectRecord,
}

/// What a finished command produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub table: String,
}

pub fn execute(cli: Cli) -> Result<RunOutput, CliError> {
    match cli.command {
        Command::RunSched { scenario, common } => run_sched(&scenario, &common),
        Command::RunContext { session, common } => run_context(&session, &common),
        Command::Report { run_dir } => report(&run_dir),
    }
}

fn load(args: &RunArgs) -> Result<(Option<ConfigFile>, Vec<Override>), CliError> {
    let file = args.config.as_deref().map(ConfigFile::load).transpose()?;
    let overrides = args.overrides.iter().map(|s| s.parse()).collect::<Result<Vec<Override>, _>>()?;
    if args.seeds == 0 {
        return Err(ConfigError::Invalid("--seeds must be at least 1".into()).into());
    }
    Ok((file, overrides))
}

fn parse_policies<P: Copy + std::str::FromStr<Err = String>>(arg: &str, all: &[P]) -> Result<Vec<P>, CliError> {
    if arg == "all" {
        return Ok(all.to_vec());
    }
    arg.split(',').map(|s| s.trim().parse::<P>().map_err(|e| ConfigError::Invalid(e).into())).collect()
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

fn run_id(kind: &str, workload: &str, policy: &str, args: &RunArgs) -> String {
    format!("{kind}-{}-{}-seed{}-n{}", slug(workload), slug(policy), args.seed, args.seeds)
}

fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_meta(dir: &Path, meta: &RunMeta) -> Result<(), CliError> {
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(meta).expect("meta serializes") + "\n")?;
    Ok(())
}

/// Per-seed CSV, aggregate CSV and the aligned table, all from per-run rows.
/// Rows are `(policy name, policy label, seed, values)` in output order.
fn write_reports<const N: usize>(
    dir: &Path,
    title: &str,
    columns: &[&str; N],
    rows: &[(String, String, u64, [f64; N])],
) -> Result<String, CliError> {
    let mut per_seed = csv_header(&["policy", "seed"], columns) + "\n";
    for (name, _, seed, v) in rows {
        per_seed += &(csv_row(&[name.clone(), seed.to_string()], v) + "\n");
    }
    fs::write(dir.join("per_seed.csv"), per_seed)?;

    let mut order: Vec<(&str, &str)> = Vec::new();
    for (name, label, _, _) in rows {
        if !order.iter().any(|(n, _)| n == name) {
            order.push((name, label));
        }
    }
    let agg_cols: Vec<String> = columns.iter().flat_map(|c| [format!("{c} mean"), format!("{c} sd")]).collect();
    let agg_refs: Vec<&str> = agg_cols.iter().map(String::as_str).collect();
    let mut agg_csv = csv_header(&["policy", "seeds"], &agg_refs) + "\n";
    let mut table_rows = Vec::new();
    for (name, label) in order {
        let mine: Vec<[f64; N]> = rows.iter().filter(|r| r.0 == name).map(|r| r.3).collect();
        let stats = aggregate(&mine);
        let flat: Vec<f64> = stats.iter().flat_map(|s| [s.mean, s.stddev]).collect();
        agg_csv += &(csv_row(&[name.to_string(), mine.len().to_string()], &flat) + "\n");
        table_rows.push((label.to_string(), stats.to_vec()));
    }
    fs::write(dir.join("aggregate.csv"), agg_csv)?;
    let table = render_table(title, columns, &table_rows);
    fs::write(dir.join("table.txt"), &table)?;
    Ok(table)
}

fn seed_list(args: &RunArgs) -> Vec<u64> {
    (args.seed..args.seed + args.seeds).collect()
}

fn sched_title(workload: &str, seeds: &[u64]) -> String {
    format!("Scheduling: {workload} ({} seed{})", seeds.len(), if seeds.len() == 1 { "" } else { "s" })
}

fn context_title(workload: &str, seeds: &[u64]) -> String {
    format!("Context: {workload} ({} seed{})", seeds.len(), if seeds.len() == 1 { "" } else { "s" })
}

pub fn run_sched(scenario: &str, args: &RunArgs) -> Result<RunOutput, CliError> {
    let (file, overrides) = load(args)?;
    let cfg = SchedRunConfig::resolve(scenario, file.as_ref(), &overrides)?;
    let policies = parse_policies(&args.policy, &PolicyKind::ALL)?;
    let seeds = seed_list(args);
    let layout = Layout::new(&args.out);
    let id = run_id("sched", &cfg.scenario.name, &args.policy, args);
    let dir = layout.run_dir(&id);
    fresh_dir(&dir)?;
    fs::write(dir.join("config.toml"), cfg.dump())?;

    // Each seed is simulated on one thread; seeds run in parallel and come
    // back in seed order.
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let turns = gen_scenario(&cfg.scenario, seed)?;
            if args.dump_workload {
                write_jsonl(&dir.join(format!("workload-seed{seed}.jsonl")), &turns)?;
            }
            Ok(policies.iter().map(|&p| (p, seed, simulate(&turns, p, &cfg.sched, seed))).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut runs: Vec<_> = per_seed.into_iter().flatten().collect();
    runs.sort_by_key(|(p, seed, _)| (PolicyKind::ALL.iter().position(|k| k == p), *seed));

    let lines = runs
        .iter()
        .flat_map(|(p, seed, out)| out.log.iter().map(move |r| SchedLine { policy: *p, seed: *seed, record: r.clone() }));
    write_jsonl(&layout.events_log(&id), lines)?;
    let rows: Vec<_> = runs
        .iter()
        .map(|(p, seed, out)| (p.name().to_string(), p.label().to_string(), *seed, compute_sched(&out.log).values()))
        .collect();
    let meta = RunMeta {
        kind: RunKind::Sched,
        run_id: id,
        workload: cfg.scenario.name.clone(),
        policies: policies.iter().map(|p| p.name().to_string()).collect(),
        seeds: seeds.clone(),
        sessions: Vec::new(),
    };
    write_meta(&dir, &meta)?;
    let table = write_reports(&dir, &sched_title(&meta.workload, &seeds), &SchedulingReport::COLUMNS, &rows)?;

    if let Some((p, seed, out)) = runs.iter().find(|(_, _, o)| !o.violations.is_empty()) {
        return Err(CliError::Invariant(format!("{} seed {seed}: {}", p.name(), out.violations[0])));
    }
    Ok(RunOutput { run_dir: dir, table })
}

/// Drive one session through the durable tiers: every message goes to the
/// cold log, every summary to the warm store, and the final state is
/// hibernated.
fn persist_session(
    layout: &Layout,
    session_id: &str,
    cfg: &ContextRunConfig,
    policy: ContextPolicy,
    messages: &[crate::context::Message],
) -> Result<(Session, Vec<InjectRecord>), CliError> {
    let dir = layout.session_dir(session_id);
    fresh_dir(&dir)?;
    let mut cold = ColdLog::open(layout.cold_log(session_id), session_id)?;
    let mut warm = WarmStore::open(layout.warm_db(session_id))?;
    let mut session = Session::new(policy, cfg.session.window, cfg.context);
    let mut records = Vec::with_capacity(messages.len());
    for m in messages {
        cold.append(m)?;
        let rec = session.inject(m.clone())?;
        if let Some(c) = &rec.compaction {
            for s in &c.summaries {
                warm.put(&WarmRecord { summary: s.clone(), created_at: rec.seq as u64 })?;
            }
        }
        records.push(rec);
    }
    cold.close()?;
    fs::write(layout.hibernate_img(session_id), hibernate(&session))?;
    Ok((session, records))
}

pub fn run_context(session_name: &str, args: &RunArgs) -> Result<RunOutput, CliError> {
    let (file, overrides) = load(args)?;
    let cfg = ContextRunConfig::resolve(session_name, file.as_ref(), &overrides)?;
    let policies = parse_policies(&args.policy, &ContextPolicy::ALL)?;
    let seeds = seed_list(args);
    let layout = Layout::new(&args.out);
    let id = run_id("context", &cfg.session.name, &args.policy, args);
    let dir = layout.run_dir(&id);
    fresh_dir(&dir)?;
    fs::write(dir.join("config.toml"), cfg.dump())?;
    let session_id = |p: ContextPolicy, seed: u64| format!("{id}-{}-seed{seed}", p.name());

    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let messages = gen_session(&cfg.session, seed)?;
            if args.dump_workload {
                write_jsonl(&dir.join(format!("workload-seed{seed}.jsonl")), &messages)?;
            }
            policies
                .iter()
                .map(|&p| {
                    let (s, recs) = persist_session(&layout, &session_id(p, seed), &cfg, p, &messages)?;
                    Ok((p, seed, s, recs))
                })
                .collect::<Result<Vec<_>, CliError>>()
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut runs: Vec<_> = per_seed.into_iter().flatten().collect();
    runs.sort_by_key(|(p, seed, _, _)| (*p, *seed));

    let lines = runs
        .iter()
        .flat_map(|(p, seed, _, recs)| recs.iter().map(move |r| ContextLine { policy: *p, seed: *seed, record: r.clone() }));
    write_jsonl(&layout.events_log(&id), lines)?;
    let rows: Vec<_> = runs
        .iter()
        .map(|(p, seed, s, _)| (p.name().to_string(), p.label().to_string(), *seed, compute_ctx(s).values()))
        .collect();
    let meta = RunMeta {
        kind: RunKind::Context,
        run_id: id.clone(),
        workload: cfg.session.name.clone(),
        policies: policies.iter().map(|p| p.name().to_string()).collect(),
        seeds: seeds.clone(),
        sessions: runs.iter().map(|(p, seed, _, _)| session_id(*p, *seed)).collect(),
    };
    write_meta(&dir, &meta)?;
    let table = write_reports(&dir, &context_title(&meta.workload, &seeds), &ContextReport::COLUMNS, &rows)?;
    Ok(RunOutput { run_dir: dir, table })
}

/// Rebuild the tables of a finished run without simulating anything.
pub fn report(run_dir: &Path) -> Result<RunOutput, CliError> {
    let meta_path = run_dir.join("run.json");
    if !meta_path.is_file() {
        return Err(CliError::NotARun(run_dir.to_path_buf()));
    }
    let meta: RunMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", meta_path.display())))?;
    let table = match meta.kind {
        RunKind::Sched => {
            let lines: Vec<SchedLine> = read_jsonl(&run_dir.join("events.log"))?;
            let mut rows = Vec::new();
            for name in &meta.policies {
                let p: PolicyKind = name.parse().map_err(ConfigError::Invalid)?;
                for &seed in &meta.seeds {
                    let log: Vec<EventRecord> =
                        lines.iter().filter(|l| l.policy == p && l.seed == seed).map(|l| l.record.clone()).collect();
                    rows.push((p, seed, compute_sched(&log).values()));
                }
            }
            rows.sort_by_key(|(p, seed, _)| (PolicyKind::ALL.iter().position(|k| k == p), *seed));
            let rows: Vec<_> =
                rows.into_iter().map(|(p, seed, v)| (p.name().to_string(), p.label().to_string(), seed, v)).collect();
            write_reports(run_dir, &sched_title(&meta.workload, &meta.seeds), &SchedulingReport::COLUMNS, &rows)?
        }
        RunKind::Context => {
            // Sessions live next to `runs/` under the same output root.
            let root = run_dir
                .parent()
                .and_then(Path::parent)
                .ok_or_else(|| CliError::NotARun(run_dir.to_path_buf()))?;
            let layout = Layout::new(root);
            let mut rows = Vec::new();
            for id in &meta.sessions {
                let s = restore(&fs::read(layout.hibernate_img(id))?)?;
                let seed = meta
                    .seeds
                    .iter()
                    .copied()
                    .find(|seed| id.ends_with(&format!("-seed{seed}")))
                    .ok_or_else(|| ConfigError::Invalid(format!("session {id} matches no seed")))?;
                rows.push((s.policy, seed, compute_ctx(&s).values()));
            }
            rows.sort_by_key(|(p, seed, _)| (*p, *seed));
            let rows: Vec<_> =
                rows.into_iter().map(|(p, seed, v)| (p.name().to_string(), p.label().to_string(), seed, v)).collect();
            write_reports(run_dir, &context_title(&meta.workload, &meta.seeds), &ContextReport::COLUMNS, &rows)?
        }
    };
    Ok(RunOutput { run_dir: run_dir.to_path_buf(), table })
}
