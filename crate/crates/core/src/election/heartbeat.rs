use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::AgentId;
use crate::Tick;

/// Missed-heartbeat failure detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatState {
    pub interval_ticks: Tick,
    pub misses_allowed: u32,
    pub last_seen: BTreeMap<AgentId, Tick>,
    suspected: BTreeSet<AgentId>,
}

impl HeartbeatState {
    pub fn new(interval_ticks: Tick, misses_allowed: u32) -> Self {
        Self {
            interval_ticks: interval_ticks.max(1),
            misses_allowed: misses_allowed.max(1),
            last_seen: BTreeMap::new(),
            suspected: BTreeSet::new(),
        }
    }

    fn silence_limit(&self) -> Tick {
        self.interval_ticks * Tick::from(self.misses_allowed)
    }

    /// Starts watching `agent` as if it had just been heard.
    pub fn register(&mut self, agent: AgentId, now: Tick) {
        self.last_seen.entry(agent).or_insert(now);
    }

    /// Records a heartbeat. Returns true if this clears a suspicion.
    pub fn observe(&mut self, agent: &AgentId, now: Tick) -> bool {
        let seen = self.last_seen.entry(agent.clone()).or_insert(now);
        *seen = (*seen).max(now);
        self.suspected.remove(agent)
    }

    pub fn is_suspected(&self, agent: &AgentId) -> bool {
        self.suspected.contains(agent)
    }

    pub fn suspected(&self) -> &BTreeSet<AgentId> {
        &self.suspected
    }

    /// Agents whose silence exceeds `interval * misses` and were not yet
    /// suspected. The comparison is strict.
    pub fn heartbeat_tick(&mut self, now: Tick) -> BTreeSet<AgentId> {
        let limit = self.silence_limit();
        let fresh: BTreeSet<AgentId> = self
            .last_seen
            .iter()
            .filter(|(a, &t)| now.saturating_sub(t) > limit && !self.suspected.contains(*a))
            .map(|(a, _)| a.clone())
            .collect();
        self.suspected.extend(fresh.iter().cloned());
        fresh
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suspicion_boundary_is_strict() {
        let a = AgentId::new("c1").unwrap();
        let mut hb = HeartbeatState::new(5, 3);
        hb.register(a.clone(), 0);
        assert!(hb.heartbeat_tick(15).is_empty());
        assert!(!hb.is_suspected(&a));
        assert_eq!(hb.heartbeat_tick(16), [a.clone()].into());
        // Reported once only.
        assert!(hb.heartbeat_tick(17).is_empty());
        assert!(hb.observe(&a, 18));
        assert!(!hb.is_suspected(&a));
    }
}
