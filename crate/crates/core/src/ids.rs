//! Identifiers shared across the messaging, agent and logistics layers.
//!
//! Agent and correlation ids are embedded as single segments in topic names
//! (reply topics are `reply/<client>/<correlation>`), so both obey the topic
//! segment grammar.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::messaging::{validate_segment, TopicError};

/// Unique, lexicographically ordered agent identifier.
///
/// Ordering is load-bearing: elections break ties by the least id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(Arc<str>);

impl AgentId {
    pub fn new(value: impl AsRef<str>) -> Result<Self, TopicError> {
        let value = value.as_ref();
        validate_segment(value)?;
        Ok(Self(Arc::from(value)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for AgentId {
    type Error = TopicError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> Self {
        id.0.to_string()
    }
}

impl std::str::FromStr for AgentId {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// Identifies one logical request; stable across its retries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CorrelationId(Arc<str>);

impl CorrelationId {
    pub fn new(value: impl AsRef<str>) -> Result<Self, TopicError> {
        let value = value.as_ref();
        validate_segment(value)?;
        Ok(Self(Arc::from(value)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CorrelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for CorrelationId {
    type Error = TopicError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CorrelationId> for String {
    fn from(id: CorrelationId) -> Self {
        id.0.to_string()
    }
}

/// Identifier of a simulated work item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agent_ids_order_lexicographically() {
        let a = AgentId::new("a1").unwrap();
        let b = AgentId::new("a10").unwrap();
        let c = AgentId::new("a2").unwrap();
        assert!(a < b && b < c);
    }

    #[test]
    fn agent_id_rejects_topic_metacharacters() {
        assert!(AgentId::new("a/b").is_err());
        assert!(AgentId::new("a b").is_err());
        assert!(AgentId::new("#").is_err());
        assert!(AgentId::new("").is_err());
    }

    #[test]
    fn agent_id_serde_roundtrip_validates() {
        let id: AgentId = serde_json::from_str("\"ctrl-01\"").unwrap();
        assert_eq!(id.as_str(), "ctrl-01");
        assert!(serde_json::from_str::<AgentId>("\"bad id\"").is_err());
    }
}
