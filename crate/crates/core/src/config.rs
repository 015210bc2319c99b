//! Run configuration: a built-in scenario or session, merged with an optional
//! TOML file and `key=value` overrides.
//!
//! The file has up to four tables: `[scenario]` and `[sched]` for scheduling
//! runs, `[session]` and `[context]` for context runs. Each table only needs
//! the fields it changes. Override keys use the same paths, for example
//! `sched.lanes=8` or `context.compaction.rho=0.25`; the value `none` clears
//! an optional field.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextParams;
use crate::scheduler::SchedParams;
use crate::workloads::{ScenarioConfig, SessionConfig, WorkloadError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<WorkloadError> for ConfigError {
    fn from(e: WorkloadError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    /// `None` removes the field.
    pub value: Option<toml::Value>,
}

impl std::str::FromStr for Override {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (k, v) = s.split_once('=').ok_or_else(|| invalid(format!("override '{s}' is not key=value")))?;
        let path: Vec<String> = k.trim().split('.').map(str::to_owned).collect();
        if path.iter().any(String::is_empty) {
            return Err(invalid(format!("override key '{k}' has an empty segment")));
        }
        let v = v.trim();
        let value = if v == "none" {
            None
        } else {
            // Anything that is not a TOML literal is taken as a bare string.
            let parsed = format!("v = {v}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v"));
            Some(parsed.unwrap_or_else(|| toml::Value::String(v.to_string())))
        };
        Ok(Override { path, value })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e| invalid(format!("config file: {e}")))?;
        for k in table.keys() {
            if !["scenario", "sched", "session", "context"].contains(&k.as_str()) {
                return Err(invalid(format!("unknown config section '{k}'")));
            }
        }
        Ok(Self { table })
    }

    fn section(&self, name: &str) -> Result<Option<&toml::Table>, ConfigError> {
        match self.table.get(name) {
            None => Ok(None),
            Some(toml::Value::Table(t)) => Ok(Some(t)),
            Some(_) => Err(invalid(format!("'{name}' must be a table"))),
        }
    }
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    match toml::Value::try_from(v).expect("config types serialize to TOML") {
        toml::Value::Table(t) => t,
        _ => unreachable!("structs serialize to tables"),
    }
}

/// Merge `patch` into `base`. Every key must already exist in `base`, so a
/// typo is an error rather than a silently ignored setting.
fn merge(base: &mut toml::Table, patch: &toml::Table, prefix: &str) -> Result<(), ConfigError> {
    for (k, v) in patch {
        let here = format!("{prefix}{k}");
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p, &format!("{here}."))?,
            (Some(slot), _) => *slot = v.clone(),
            (None, _) => return Err(invalid(format!("unknown field '{here}'"))),
        }
    }
    Ok(())
}

fn apply(base: &mut toml::Table, ov: &Override) -> Result<(), ConfigError> {
    let full = ov.path.join(".");
    let (last, parents) = ov.path[1..].split_last().ok_or_else(|| invalid(format!("override '{full}' names a section")))?;
    let mut t = base;
    for p in parents {
        t = match t.get_mut(p) {
            Some(toml::Value::Table(inner)) => inner,
            _ => return Err(invalid(format!("unknown field '{full}'"))),
        };
    }
    match &ov.value {
        None => {
            t.remove(last);
        }
        Some(v) => {
            // The only optional field may be absent from the tree.
            if !t.contains_key(last) && last != "boost_interval_ms" {
                return Err(invalid(format!("unknown field '{full}'")));
            }
            t.insert(last.clone(), v.clone());
        }
    }
    Ok(())
}

fn resolve<T: Serialize + DeserializeOwned>(
    base: &T,
    section: &str,
    file: Option<&ConfigFile>,
    overrides: &[Override],
) -> Result<T, ConfigError> {
    let mut table = to_table(base);
    if let Some(patch) = file.map(|f| f.section(section)).transpose()?.flatten() {
        merge(&mut table, patch, &format!("{section}."))?;
    }
    for ov in overrides.iter().filter(|o| o.path[0] == section) {
        apply(&mut table, ov)?;
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| invalid(format!("{section}: {}", e.message())))
}

fn check_sections(overrides: &[Override], allowed: [&str; 2]) -> Result<(), ConfigError> {
    for ov in overrides {
        if !allowed.contains(&ov.path[0].as_str()) {
            return Err(invalid(format!(
                "override '{}' must start with {} or {}",
                ov.path.join("."),
                allowed[0],
                allowed[1]
            )));
        }
    }
    Ok(())
}

/// A built-in name, or a path to a TOML file holding a complete definition.
fn base_named<T: DeserializeOwned>(
    name: &str,
    builtin: impl Fn(&str) -> Result<T, WorkloadError>,
) -> Result<T, ConfigError> {
    match builtin(name) {
        Ok(cfg) => Ok(cfg),
        Err(e) => {
            let p = Path::new(name);
            if !p.is_file() {
                return Err(e.into());
            }
            let text = std::fs::read_to_string(p)
                .map_err(|source| ConfigError::Io { path: name.to_string(), source })?;
            toml::from_str(&text).map_err(|e| invalid(format!("{name}: {}", e.message())))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedRunConfig {
    pub scenario: ScenarioConfig,
    pub sched: SchedParams,
}

impl SchedRunConfig {
    pub fn resolve(name: &str, file: Option<&ConfigFile>, overrides: &[Override]) -> Result<Self, ConfigError> {
        check_sections(overrides, ["scenario", "sched"])?;
        let scenario: ScenarioConfig = resolve(&base_named(name, ScenarioConfig::builtin)?, "scenario", file, overrides)?;
        scenario.validate()?;
        // Scheduler defaults follow the scenario (lane count, admission ceiling).
        let sched = resolve(&SchedParams::for_scenario(&scenario), "sched", file, overrides)?;
        if sched.lanes == 0 {
            return Err(invalid("sched.lanes must be positive"));
        }
        Ok(Self { scenario, sched })
    }

    /// Full parameter dump written next to every run.
    pub fn dump(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRunConfig {
    pub session: SessionConfig,
    pub context: ContextParams,
}

impl ContextRunConfig {
    pub fn resolve(name: &str, file: Option<&ConfigFile>, overrides: &[Override]) -> Result<Self, ConfigError> {
        check_sections(overrides, ["session", "context"])?;
        let session: SessionConfig = resolve(&base_named(name, SessionConfig::builtin)?, "session", file, overrides)?;
        session.validate()?;
        let context = resolve(&ContextParams::default(), "context", file, overrides)?;
        Ok(Self { session, context })
    }

    pub fn dump(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
