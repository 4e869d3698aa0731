//! Crash-stop fault schedules.

use agentflow::Tick;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::rng_stream;

const ORDER: u64 = 3;
const TIMES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEvent {
    pub at: Tick,
    /// Controller index.
    pub controller: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultPlan {
    pub controller_failure_fraction: f64,
    /// Edge-node disruptions. Controllers are the only edge nodes modelled,
    /// so this adds to the controller fraction (capped at 1).
    pub edge_failure_fraction: f64,
    /// Failures are drawn uniformly in `[start, end)` fractions of the run.
    pub window: (f64, f64),
    /// Extra failures at fixed ticks, applied on top of the random ones.
    pub scripted: Vec<FailureEvent>,
}

impl Default for FaultPlan {
    fn default() -> Self {
        Self {
            controller_failure_fraction: 0.2,
            edge_failure_fraction: 0.0,
            window: (0.2, 0.8),
            scripted: Vec::new(),
        }
    }
}

impl FaultPlan {
    pub fn none() -> Self {
        Self {
            controller_failure_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            (
                "fault_plan.controller_failure_fraction",
                self.controller_failure_fraction,
            ),
            (
                "fault_plan.edge_failure_fraction",
                self.edge_failure_fraction,
            ),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError {
                    field: field.into(),
                    message: format!("{v} is outside [0, 1]"),
                });
            }
        }
        let (a, b) = self.window;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return Err(ConfigError {
                field: "fault_plan.window".into(),
                message: format!("({a}, {b}) is not an ordered sub-range of [0, 1]"),
            });
        }
        Ok(())
    }

    pub fn failure_count(&self, n_controllers: usize) -> usize {
        let frac = (self.controller_failure_fraction + self.edge_failure_fraction).min(1.0);
        (frac * n_controllers as f64).round() as usize
    }

    /// Window bounds in ticks for a run of `duration` ticks.
    pub fn window_ticks(&self, duration: Tick) -> (Tick, Tick) {
        let f = |x: f64| (x * duration as f64).round() as Tick;
        (f(self.window.0), f(self.window.1))
    }

    /// Victims come from a seeded permutation and each permutation slot owns
    /// a fixed failure time, so a larger fraction fails a superset of nodes
    /// at the same instants.
    pub fn schedule(&self, n_controllers: usize, duration: Tick, seed: u64) -> Vec<FailureEvent> {
        let mut order: Vec<usize> = (0..n_controllers).collect();
        order.shuffle(&mut rng_stream(seed, ORDER));
        let (lo, hi) = self.window_ticks(duration);
        let mut times = rng_stream(seed, TIMES);
        let slots: Vec<Tick> = (0..n_controllers)
            .map(|_| {
                if hi > lo {
                    times.random_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect();
        let mut out: Vec<FailureEvent> = order
            .into_iter()
            .zip(slots)
            .take(self.failure_count(n_controllers))
            .map(|(controller, at)| FailureEvent { at, controller })
            .collect();
        out.extend(
            self.scripted
                .iter()
                .copied()
                .filter(|f| f.controller < n_controllers),
        );
        out.sort();
        out.dedup_by_key(|f| f.controller);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_rounds_combined_fraction() {
        let p = FaultPlan {
            controller_failure_fraction: 0.2,
            edge_failure_fraction: 0.1,
            ..FaultPlan::default()
        };
        assert_eq!(p.failure_count(20), 6);
        assert_eq!(FaultPlan::none().failure_count(20), 0);
    }

    #[test]
    fn higher_fractions_fail_a_superset_at_the_same_times() {
        let mut prev: Vec<FailureEvent> = Vec::new();
        for pct in [10, 15, 20, 25, 30] {
            let p = FaultPlan {
                controller_failure_fraction: pct as f64 / 100.0,
                ..FaultPlan::default()
            };
            let s = p.schedule(20, 100_000, 7);
            assert_eq!(s.len(), p.failure_count(20));
            assert!(prev.iter().all(|f| s.contains(f)));
            assert!(s.iter().all(|f| (20_000..80_000).contains(&f.at)));
            prev = s;
        }
    }

    #[test]
    fn rejects_out_of_range_fractions() {
        let p = FaultPlan {
            edge_failure_fraction: 1.5,
            ..FaultPlan::default()
        };
        assert_eq!(
            p.validate().unwrap_err().field,
            "fault_plan.edge_failure_fraction"
        );
    }
}
