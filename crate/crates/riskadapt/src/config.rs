//! Experiment configuration: defaults, TOML files, and dotted-path CLI
//! overrides, resolved in that precedence order.
//!
//! The fully resolved config (every key explicit) is serialized into each
//! run directory, so a run is reproducible from its own artifacts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::BalancerConfig;
use crate::ppo::PpoConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {why}")]
    Unreadable { path: String, why: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid override `{0}`: expected key.path=value")]
    BadOverride(String),
    #[error("override key `{0}` does not address a table")]
    OverridePath(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which environment a run trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Balancer,
    RiskyChoice,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: EnvKind,
    #[serde(flatten)]
    pub balancer: BalancerConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            kind: EnvKind::Balancer,
            balancer: BalancerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Output root; the CLI's --out and RISKADAPT_OUT take precedence.
    pub out_dir: String,
    /// Evaluate every N iterations during training (0 = off).
    pub eval_cadence: u64,
    /// Extra checkpoints every N iterations (0 = final only).
    pub checkpoint_cadence: u64,
    /// Run directory name; derived from kind/mode/seed when empty.
    pub run_id: String,
    /// Environments per target velocity in eval protocols.
    pub eval_envs: usize,
    /// Episode length (steps) in eval protocols.
    pub eval_episode_len: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "runs".into(),
            eval_cadence: 0,
            checkpoint_cadence: 0,
            run_id: String::new(),
            eval_envs: 256,
            eval_episode_len: 500,
        }
    }
}

/// The three explicit sections every run resolves to.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub algo: PpoConfig,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env
            .balancer
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("env: {e}")))?;
        self.algo
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn run_id(&self) -> String {
        if self.run.run_id.is_empty() {
            let kind = match self.env.kind {
                EnvKind::Balancer => "balancer",
                EnvKind::RiskyChoice => "risky_choice",
            };
            format!("{kind}_{}_seed{}", self.algo.risk_mode.as_str(), self.run.seed)
        } else {
            self.run.run_id.clone()
        }
    }
}

/// Resolve defaults <- file <- overrides, then validate.
pub fn resolve_config(
    file: Option<&Path>,
    overrides: &[String],
) -> Result<ExperimentConfig, ConfigError> {
    let mut value =
        toml::Value::try_from(ExperimentConfig::default()).expect("defaults serialize");

    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            why: e.to_string(),
        })?;
        let file_value: toml::Value = text
            .parse()
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        merge(&mut value, file_value);
    }

    for spec in overrides {
        apply_override(&mut value, spec)?;
    }

    let config: ExperimentConfig = value
        .try_into()
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Deep-merge `overlay` into `base`; tables merge keywise, everything else
/// replaces.
fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(base_table), toml::Value::Table(overlay_table)) => {
            for (key, overlay_value) in overlay_table {
                match base_table.get_mut(&key) {
                    Some(base_value) => merge(base_value, overlay_value),
                    None => {
                        base_table.insert(key, overlay_value);
                    }
                }
            }
        }
        (base_slot, overlay_value) => *base_slot = overlay_value,
    }
}

/// Apply a `section.key=value` override; the value is parsed as TOML where
/// possible and falls back to a string.
fn apply_override(value: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let (key_path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let key_path = key_path.trim();
    if key_path.is_empty() {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let parsed: toml::Value = match format!("v = {raw_value}").parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(raw_value.trim().to_string()),
    };

    let mut cursor = value;
    let segments: Vec<&str> = key_path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| ConfigError::OverridePath(key_path.to_string()))?;
        if i + 1 == segments.len() {
            table.insert(segment.to_string(), parsed);
            return Ok(());
        }
        cursor = table
            .entry(segment.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    unreachable!("override loop returns on the last segment")
}
