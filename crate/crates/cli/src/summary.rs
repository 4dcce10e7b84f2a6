//! Pass/fail records and the per-command JSON summary.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// One assertion: `value` compared against `limit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value <= limit, skipped: false, note: None }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value >= limit, skipped: false, note: None }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: f64::from(u8::from(ok)), limit: 1.0, passed: ok, skipped: false, note: None }
    }

    pub fn skipped(name: impl Into<String>, why: impl Into<String>) -> Self {
        Self { name: name.into(), value: f64::NAN, limit: f64::NAN, passed: true, skipped: true, note: Some(why.into()) }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// What every subcommand writes to `<output>/<command>.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub passed: bool,
    pub failures: Vec<Check>,
    pub checks: Vec<Check>,
    /// Files written next to the summary.
    pub artifacts: Vec<String>,
    pub data: serde_json::Value,
}

impl Summary {
    pub fn new(command: &str, cfg: &RunConfig, checks: Vec<Check>, artifacts: Vec<String>, data: serde_json::Value) -> Self {
        let failures: Vec<Check> = checks.iter().filter(|c| !c.passed).cloned().collect();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            passed: failures.is_empty(),
            failures,
            checks,
            artifacts,
            data,
        }
    }
}

pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}
