use serde::{Deserialize, Serialize};

use crate::ids::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentState {
    Initializing,
    Active,
    Terminating,
    Terminated,
    Failed,
}

impl AgentState {
    /// `Initializing → Active → (Terminating → Terminated | Failed)`.
    /// A crashed node is still reaped when its holon is torn down, so
    /// `Failed → Terminating` is allowed as cleanup.
    pub fn can_transition(self, to: AgentState) -> bool {
        use AgentState::*;
        matches!(
            (self, to),
            (Initializing, Active)
                | (Active, Terminating)
                | (Active, Failed)
                | (Failed, Terminating)
                | (Terminating, Terminated)
        )
    }

    pub fn is_live(self) -> bool {
        self == AgentState::Active
    }
}

/// One agent's place in the holon forest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolonNode {
    pub id: AgentId,
    pub parent: Option<AgentId>,
    pub children: Vec<AgentId>,
    pub state: AgentState,
}

impl HolonNode {
    pub fn new(id: AgentId, parent: Option<AgentId>) -> Self {
        Self {
            id,
            parent,
            children: Vec::new(),
            state: AgentState::Initializing,
        }
    }

    pub(crate) fn transition(&mut self, to: AgentState) {
        debug_assert!(
            self.state.can_transition(to),
            "illegal transition {:?} -> {:?} for {}",
            self.state,
            to,
            self.id
        );
        self.state = to;
    }
}
