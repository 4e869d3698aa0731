//! Simulated link behaviour: bounded uniform latency, independent loss and
//! static partitions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::AgentId;
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("latency range [{lo}, {hi}] is inverted")]
    InvertedLatency { lo: Tick, hi: Tick },
    #[error("drop probability {0} outside [0, 1]")]
    DropProbability(f64),
    #[error("agent {0} appears in more than one partition group")]
    OverlappingPartitions(AgentId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    /// Inclusive `[lo, hi]` latency in ticks, sampled uniformly per delivery.
    #[serde(default = "default_latency")]
    pub latency_ticks: (Tick, Tick),
    #[serde(default)]
    pub drop_probability: f64,
    /// Disjoint groups; a delivery whose endpoints sit in different groups is
    /// dropped. Agents listed in no group share an implicit residual group.
    #[serde(default)]
    pub partitions: Vec<BTreeSet<AgentId>>,
}

fn default_latency() -> (Tick, Tick) {
    (1, 10)
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            latency_ticks: default_latency(),
            drop_probability: 0.0,
            partitions: Vec::new(),
        }
    }
}

impl NetworkModel {
    pub fn lossless(lo: Tick, hi: Tick) -> Self {
        Self {
            latency_ticks: (lo, hi),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let (lo, hi) = self.latency_ticks;
        if lo > hi {
            return Err(NetworkError::InvertedLatency { lo, hi });
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(NetworkError::DropProbability(self.drop_probability));
        }
        let mut seen = BTreeSet::new();
        for group in &self.partitions {
            for id in group {
                if !seen.insert(id) {
                    return Err(NetworkError::OverlappingPartitions(id.clone()));
                }
            }
        }
        Ok(())
    }

    fn group_of(&self, id: &AgentId) -> Option<usize> {
        self.partitions.iter().position(|g| g.contains(id))
    }

    pub fn reachable(&self, from: &AgentId, to: &AgentId) -> bool {
        self.partitions.is_empty() || self.group_of(from) == self.group_of(to)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    #[test]
    fn validation() {
        assert!(NetworkModel::default().validate().is_ok());
        assert!(NetworkModel::lossless(5, 4).validate().is_err());
        let mut m = NetworkModel {
            drop_probability: 1.5,
            ..NetworkModel::default()
        };
        assert!(m.validate().is_err());
        m.drop_probability = 0.5;
        m.partitions = vec![[id("a"), id("b")].into(), [id("b")].into()];
        assert_eq!(
            m.validate(),
            Err(NetworkError::OverlappingPartitions(id("b")))
        );
    }

    #[test]
    fn partition_reachability() {
        let m = NetworkModel {
            partitions: vec![[id("a")].into(), [id("b")].into()],
            ..NetworkModel::default()
        };
        assert!(!m.reachable(&id("a"), &id("b")));
        assert!(m.reachable(&id("a"), &id("a")));
        assert!(m.reachable(&id("x"), &id("y")));
        assert!(!m.reachable(&id("x"), &id("a")));
    }
}
