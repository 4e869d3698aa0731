//! Coordination primitives for agent swarms: a topic-based publish-subscribe
//! substrate, a deterministic holonic agent runtime, request/response
//! couriers with per-request reply topics, and load-ranked elections.

pub mod agent;
pub mod election;
pub mod ids;
pub mod log;
pub mod logistics;
pub mod messaging;
pub mod sequencer;

/// Logical time unit. One tick is one millisecond of simulated time.
pub type Tick = u64;
