//! Topic-based publish-subscribe substrate.
//!
//! [`Broker`] is the seam agents talk to; [`SimBroker`] is the seeded
//! transport that models latency, loss and partitions for the simulator.

mod broker;
mod message;
mod network;
mod topic;

pub use broker::{
    Broker, BrokerError, BrokerStats, Delivery, DropReason, DroppedDelivery, PublishReport,
    ScheduledDelivery, SimBroker, Subscription, SubscriptionId,
};
pub use message::{Message, DEFAULT_MAX_PAYLOAD};
pub use network::{NetworkError, NetworkModel};
pub use topic::{
    match_filter, validate_segment, TopicError, TopicFilter, TopicName, LEVEL_SEPARATOR,
    MULTI_LEVEL_WILDCARD,
};
