use std::sync::Arc;

use crate::ids::{AgentId, CorrelationId};
use crate::messaging::TopicName;
use crate::Tick;

/// Default upper bound on payload size.
pub const DEFAULT_MAX_PAYLOAD: usize = 64 * 1024;

/// Unit of publish-subscribe communication.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub topic: TopicName,
    pub payload: Arc<[u8]>,
    pub sender: AgentId,
    pub correlation: Option<CorrelationId>,
    pub sent_at: Tick,
}

impl Message {
    pub fn new(
        topic: TopicName,
        payload: impl Into<Arc<[u8]>>,
        sender: AgentId,
        sent_at: Tick,
    ) -> Self {
        Self {
            topic,
            payload: payload.into(),
            sender,
            correlation: None,
            sent_at,
        }
    }

    pub fn with_correlation(mut self, correlation: CorrelationId) -> Self {
        self.correlation = Some(correlation);
        self
    }
}
