//! Holonic agent runtime: lifecycle, parent/child forest, serialized
//! handler dispatch and timers.

mod behavior;
mod holon;
mod runtime;

pub use behavior::AgentBehavior;
pub use holon::{AgentState, HolonNode};
pub use runtime::{AgentContext, AgentError, Runtime, RuntimeStats, SUBTICKS_PER_TICK};
