use agentflow::log::LogLevel;
use agentflow::logistics::RetryPolicy;
use agentflow::messaging::NetworkModel;
use agentflow::Tick;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faults::FaultPlan;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElectionParams {
    pub window_ticks: Tick,
    pub heartbeat_interval_ticks: Tick,
    pub misses_allowed: u32,
    /// Extra rounds tried after an election with no live candidate.
    pub max_requeues: u32,
    pub requeue_delay_ticks: Tick,
}

impl Default for ElectionParams {
    fn default() -> Self {
        Self {
            window_ticks: 20,
            heartbeat_interval_ticks: 5,
            misses_allowed: 3,
            max_requeues: 3,
            requeue_delay_ticks: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    pub work_units: f64,
    /// Work units per tick per controller.
    pub controller_capacity: f64,
    pub status_period_ticks: Tick,
    /// Controller processing time per AMR status report.
    pub status_cost_ticks: f64,
    /// Controller processing time per task dispatch.
    pub dispatch_cost_ticks: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            work_units: 1.0,
            controller_capacity: 0.001,
            status_period_ticks: 500,
            status_cost_ticks: 10.0,
            dispatch_cost_ticks: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_amrs: usize,
    pub n_controllers: usize,
    pub n_coordinators: usize,
    pub task_rate_per_min: f64,
    /// Task generation stops here; the run continues until tasks settle.
    pub duration_ticks: Tick,
    pub ticks_per_second: u64,
    pub seed: u64,
    /// No tasks before this tick, so coordinators hold load reports.
    pub warmup_ticks: Tick,
    /// Upper bound on the settle phase after `duration_ticks`.
    pub drain_ticks: Tick,
    pub network: NetworkModel,
    pub fault_plan: FaultPlan,
    pub election: ElectionParams,
    pub workload: Workload,
    pub amr_policy: RetryPolicy,
    pub dispatch_policy: RetryPolicy,
    pub log_level: LogLevel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_amrs: 300,
            n_controllers: 20,
            n_coordinators: 4,
            task_rate_per_min: 600.0,
            duration_ticks: 60_000,
            ticks_per_second: 1000,
            seed: 1,
            warmup_ticks: 100,
            drain_ticks: 120_000,
            network: NetworkModel::default(),
            fault_plan: FaultPlan::default(),
            election: ElectionParams::default(),
            workload: Workload::default(),
            amr_policy: RetryPolicy {
                timeout_ticks: 60_000,
                max_retries: 0,
                backoff_ticks: 0,
            },
            dispatch_policy: RetryPolicy {
                timeout_ticks: 120_000,
                max_retries: 0,
                backoff_ticks: 0,
            },
            log_level: LogLevel::Summary,
        }
    }
}

impl SimConfig {
    /// Fault-free, lossless variant of the default scenario.
    pub fn fault_free() -> Self {
        Self {
            fault_plan: FaultPlan::none(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("n_amrs", self.n_amrs),
            ("n_controllers", self.n_controllers),
            ("n_coordinators", self.n_coordinators),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ConfigError::new(field, "must be positive"));
            }
        }
        if self.n_coordinators > self.n_controllers {
            return Err(ConfigError::new(
                "n_coordinators",
                "cannot exceed n_controllers; every coordinator needs a cluster",
            ));
        }
        if !(self.task_rate_per_min >= 0.0 && self.task_rate_per_min.is_finite()) {
            return Err(ConfigError::new(
                "task_rate_per_min",
                "must be a finite non-negative number",
            ));
        }
        if self.duration_ticks == 0 {
            return Err(ConfigError::new("duration_ticks", "must be positive"));
        }
        if self.ticks_per_second == 0 {
            return Err(ConfigError::new("ticks_per_second", "must be positive"));
        }
        self.network
            .validate()
            .map_err(|e| ConfigError::new("network", e.to_string()))?;
        self.fault_plan.validate()?;
        let e = &self.election;
        if e.window_ticks == 0 {
            return Err(ConfigError::new(
                "election.window_ticks",
                "must be positive",
            ));
        }
        if e.heartbeat_interval_ticks == 0 {
            return Err(ConfigError::new(
                "election.heartbeat_interval_ticks",
                "must be positive",
            ));
        }
        if e.misses_allowed == 0 {
            return Err(ConfigError::new(
                "election.misses_allowed",
                "must be positive",
            ));
        }
        let w = &self.workload;
        if !(w.work_units > 0.0 && w.work_units.is_finite()) {
            return Err(ConfigError::new("workload.work_units", "must be positive"));
        }
        if !(w.controller_capacity > 0.0 && w.controller_capacity.is_finite()) {
            return Err(ConfigError::new(
                "workload.controller_capacity",
                "must be positive",
            ));
        }
        if w.status_period_ticks == 0 {
            return Err(ConfigError::new(
                "workload.status_period_ticks",
                "must be positive",
            ));
        }
        for (field, v) in [
            ("workload.status_cost_ticks", w.status_cost_ticks),
            ("workload.dispatch_cost_ticks", w.dispatch_cost_ticks),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::new(
                    field,
                    "must be a finite non-negative number",
                ));
            }
        }
        for (field, p) in [
            ("amr_policy", &self.amr_policy),
            ("dispatch_policy", &self.dispatch_policy),
        ] {
            p.validate()
                .map_err(|e| ConfigError::new(field, e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
        SimConfig::fault_free().validate().unwrap();
    }

    #[test]
    fn errors_name_the_field() {
        let cfg = SimConfig {
            n_amrs: 0,
            ..SimConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().field, "n_amrs");
        let cfg = SimConfig {
            task_rate_per_min: -1.0,
            ..SimConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().field, "task_rate_per_min");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<SimConfig>(r#"{"n_amrs": 5, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let cfg: SimConfig =
            serde_json::from_str(r#"{"n_amrs": 5, "workload": {"work_units": 2.0}}"#).unwrap();
        assert_eq!(cfg.n_amrs, 5);
        assert_eq!(cfg.workload.controller_capacity, 0.001);
    }
}
