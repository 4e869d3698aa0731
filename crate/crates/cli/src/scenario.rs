//! Scenario files: a `SimConfig` as JSON plus an optional sweep block.

use std::path::Path;

use agentflow_sim::SimConfig;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// Dotted config path, e.g. `n_amrs` or `fault_plan.controller_failure_fraction`.
    pub parameter: String,
    pub values: Vec<Value>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    /// Config document with the sweep block removed.
    pub base: Value,
    pub sweep: Option<Sweep>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut doc: Value =
            serde_json::from_str(text).map_err(|e| CliError::Input(format!("scenario: {e}")))?;
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| CliError::Input("scenario must be a JSON object".into()))?;
        let sweep = obj
            .remove("sweep")
            .map(serde_json::from_value::<Sweep>)
            .transpose()
            .map_err(|e| CliError::Input(format!("sweep: {e}")))?;
        let scenario = Self { base: doc, sweep };
        // Reject unknown keys and bad values before anything runs.
        scenario.config_with(&[])?;
        Ok(scenario)
    }

    /// Base config with `overrides` applied in order.
    pub fn config_with(&self, overrides: &[(String, Value)]) -> Result<SimConfig, CliError> {
        let mut doc = self.base.clone();
        for (path, value) in overrides {
            set_path(&mut doc, path, value.clone())?;
        }
        let cfg: SimConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Input(format!("config: {e}")))?;
        cfg.validate()
            .map_err(|e| CliError::Input(format!("config: {e}")))?;
        Ok(cfg)
    }
}

/// Parses `key=value`; the value is JSON when it parses as JSON, otherwise
/// a plain string.
pub fn parse_override(arg: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override {arg:?} is not key=value")))?;
    if key.is_empty() {
        return Err(CliError::Input(format!(
            "override {arg:?} has an empty key"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Input(format!(
                "override path {path:?} has an empty segment"
            )));
        }
        if !cur.is_object() {
            return Err(CliError::Input(format!(
                "override path {path:?} crosses a non-object"
            )));
        }
        let obj: &mut Map<String, Value> = cur.as_object_mut().expect("checked");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}
