//! Load-ranked election and heartbeat failure detection.
//!
//! A candidate's load is its queued work divided by its capacity. Each round
//! collects at most one rank per candidate inside a bounded window and elects
//! the minimum, breaking ties by the least agent id. The winner is a pure
//! function of the collected rank set, so every observer holding the same set
//! computes the same leader.

mod coordinator;
mod heartbeat;
mod round;

pub use coordinator::{
    CoordinatorConfig, LoadReport, LoadingCoordinator, RankMessage, ResultMessage, TaskRequest,
    TaskResponse, TaskStatus, TASK_TOPIC_SUFFIX,
};
pub use heartbeat::HeartbeatState;
pub use round::{
    argmin, compute_load, select_candidate, CandidateInfo, Collect, ElectionBook, ElectionRound,
    LoadRank, RoundId,
};

use thiserror::Error;

use crate::ids::{AgentId, TaskId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElectionError {
    #[error("capacity must be positive and finite, got {0}")]
    InvalidCapacity(f64),
    #[error("pending work must be non-negative and finite, got {0}")]
    InvalidWork(f64),
    #[error("no ranks collected for task {0}")]
    ElectionFailed(TaskId),
    #[error("round for task {task} cannot decide before its window closes at {deadline}")]
    NotReady { task: TaskId, deadline: u64 },
    #[error("no live service candidate")]
    NoServiceAvailable,
    #[error("{0} is not the decided winner")]
    NotWinner(AgentId),
    #[error("round is not decided")]
    Undecided,
}
