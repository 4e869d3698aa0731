//! Broker abstraction and the simulated, seeded transport behind it.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::AgentId;
use crate::messaging::{
    match_filter, Message, NetworkError, NetworkModel, TopicError, TopicFilter,
    DEFAULT_MAX_PAYLOAD, LEVEL_SEPARATOR,
};
use crate::sequencer::Sequencer;
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubscriptionId(pub u64);

impl fmt::Display for SubscriptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sub-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BrokerError {
    #[error("invalid topic: {0}")]
    InvalidTopic(#[from] TopicError),
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("unknown subscription {0}")]
    UnknownSubscription(SubscriptionId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub id: SubscriptionId,
    pub subscriber: AgentId,
    pub filter: TopicFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Loss,
    Partition,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledDelivery {
    pub subscription: SubscriptionId,
    pub subscriber: AgentId,
    pub deliver_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedDelivery {
    pub subscription: SubscriptionId,
    pub subscriber: AgentId,
    pub reason: DropReason,
}

/// What a single publish turned into.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PublishReport {
    pub scheduled: Vec<ScheduledDelivery>,
    pub dropped: Vec<DroppedDelivery>,
}

/// A delivery popped from the transport, ready to dispatch.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub at: Tick,
    pub seq: u64,
    pub subscription: SubscriptionId,
    pub subscriber: AgentId,
    pub message: Arc<Message>,
}

impl PartialEq for Delivery {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Delivery {}

impl PartialOrd for Delivery {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Delivery {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerStats {
    pub published: u64,
    pub scheduled: u64,
    pub dropped: u64,
}

/// Minimal broker surface agents depend on. Implementations must make the
/// three operations atomic with respect to each other.
pub trait Broker: Send + Sync {
    /// Identical `(subscriber, filter)` pairs return the existing id.
    fn subscribe(
        &self,
        subscriber: &AgentId,
        filter: &TopicFilter,
    ) -> Result<SubscriptionId, BrokerError>;
    /// Deliveries already scheduled on the subscription still arrive.
    fn unsubscribe(&self, id: SubscriptionId) -> Result<(), BrokerError>;
    fn publish(&self, msg: Message) -> Result<PublishReport, BrokerError>;
}

struct DropRule {
    filter: TopicFilter,
    remaining: u32,
}

struct State {
    network: NetworkModel,
    max_payload: usize,
    rng: ChaCha8Rng,
    sequencer: Sequencer,
    next_id: u64,
    subs: BTreeMap<SubscriptionId, Subscription>,
    by_key: HashMap<(AgentId, TopicFilter), SubscriptionId>,
    exact: HashMap<String, BTreeSet<SubscriptionId>>,
    wildcard: HashMap<String, BTreeSet<SubscriptionId>>,
    pending: BinaryHeap<Reverse<Delivery>>,
    drop_rules: Vec<DropRule>,
    stats: BrokerStats,
}

impl State {
    fn index_for(
        &mut self,
        filter: &TopicFilter,
    ) -> &mut HashMap<String, BTreeSet<SubscriptionId>> {
        if filter.is_wildcard() {
            &mut self.wildcard
        } else {
            &mut self.exact
        }
    }

    fn index_key(filter: &TopicFilter) -> String {
        filter
            .wildcard_prefix()
            .unwrap_or(filter.as_str())
            .to_string()
    }

    fn matching(&self, topic: &str) -> BTreeSet<SubscriptionId> {
        let mut out = BTreeSet::new();
        if let Some(ids) = self.exact.get(topic) {
            out.extend(ids.iter().copied());
        }
        if !self.wildcard.is_empty() {
            // Every proper prefix of the topic, including the empty one for `#`.
            if let Some(ids) = self.wildcard.get("") {
                out.extend(ids.iter().copied());
            }
            for (i, c) in topic.char_indices() {
                if c == LEVEL_SEPARATOR {
                    if let Some(ids) = self.wildcard.get(&topic[..i]) {
                        out.extend(ids.iter().copied());
                    }
                }
            }
        }
        out
    }
}

/// Seeded in-process transport. Deliveries are held in a queue ordered by
/// `(tick, sequence)`, with sequence numbers drawn at publish time from a
/// [`Sequencer`] shared with whoever drives the clock.
pub struct SimBroker {
    state: Mutex<State>,
}

impl SimBroker {
    pub fn new(
        network: NetworkModel,
        seed: u64,
        sequencer: Sequencer,
    ) -> Result<Self, NetworkError> {
        network.validate()?;
        Ok(Self {
            state: Mutex::new(State {
                network,
                max_payload: DEFAULT_MAX_PAYLOAD,
                rng: ChaCha8Rng::seed_from_u64(seed),
                sequencer,
                next_id: 0,
                subs: BTreeMap::new(),
                by_key: HashMap::new(),
                exact: HashMap::new(),
                wildcard: HashMap::new(),
                pending: BinaryHeap::new(),
                drop_rules: Vec::new(),
                stats: BrokerStats::default(),
            }),
        })
    }

    pub fn with_max_payload(self, max: usize) -> Self {
        self.state.lock().max_payload = max;
        self
    }

    pub fn network(&self) -> NetworkModel {
        self.state.lock().network.clone()
    }

    /// Drops every delivery of the next `count` publishes whose topic matches
    /// `filter`. Used to script loss schedules.
    pub fn drop_next(&self, filter: TopicFilter, count: u32) {
        self.state.lock().drop_rules.push(DropRule {
            filter,
            remaining: count,
        });
    }

    /// `(tick, sequence)` of the earliest pending delivery.
    pub fn peek(&self) -> Option<(Tick, u64)> {
        self.state
            .lock()
            .pending
            .peek()
            .map(|Reverse(d)| (d.at, d.seq))
    }

    pub fn pop(&self) -> Option<Delivery> {
        self.state.lock().pending.pop().map(|Reverse(d)| d)
    }

    pub fn pending_len(&self) -> usize {
        self.state.lock().pending.len()
    }

    pub fn stats(&self) -> BrokerStats {
        self.state.lock().stats
    }

    pub fn subscription(&self, id: SubscriptionId) -> Option<Subscription> {
        self.state.lock().subs.get(&id).cloned()
    }

    pub fn subscriptions_of(&self, agent: &AgentId) -> Vec<Subscription> {
        self.state
            .lock()
            .subs
            .values()
            .filter(|s| &s.subscriber == agent)
            .cloned()
            .collect()
    }

    pub fn subscription_count(&self) -> usize {
        self.state.lock().subs.len()
    }
}

impl Broker for SimBroker {
    fn subscribe(
        &self,
        subscriber: &AgentId,
        filter: &TopicFilter,
    ) -> Result<SubscriptionId, BrokerError> {
        let mut st = self.state.lock();
        let key = (subscriber.clone(), filter.clone());
        if let Some(id) = st.by_key.get(&key) {
            return Ok(*id);
        }
        let id = SubscriptionId(st.next_id);
        st.next_id += 1;
        st.by_key.insert(key, id);
        st.subs.insert(
            id,
            Subscription {
                id,
                subscriber: subscriber.clone(),
                filter: filter.clone(),
            },
        );
        let index_key = State::index_key(filter);
        st.index_for(filter)
            .entry(index_key)
            .or_default()
            .insert(id);
        Ok(id)
    }

    fn unsubscribe(&self, id: SubscriptionId) -> Result<(), BrokerError> {
        let mut st = self.state.lock();
        let sub = st
            .subs
            .remove(&id)
            .ok_or(BrokerError::UnknownSubscription(id))?;
        st.by_key
            .remove(&(sub.subscriber.clone(), sub.filter.clone()));
        let index_key = State::index_key(&sub.filter);
        let index = st.index_for(&sub.filter);
        if let Some(set) = index.get_mut(&index_key) {
            set.remove(&id);
            if set.is_empty() {
                index.remove(&index_key);
            }
        }
        Ok(())
    }

    fn publish(&self, msg: Message) -> Result<PublishReport, BrokerError> {
        let mut st = self.state.lock();
        if msg.payload.len() > st.max_payload {
            return Err(BrokerError::PayloadTooLarge {
                len: msg.payload.len(),
                max: st.max_payload,
            });
        }
        st.stats.published += 1;

        let scripted = match st
            .drop_rules
            .iter_mut()
            .find(|r| r.remaining > 0 && match_filter(&r.filter, &msg.topic))
        {
            Some(rule) => {
                rule.remaining -= 1;
                true
            }
            None => false,
        };

        let targets = st.matching(msg.topic.as_str());
        let msg = Arc::new(msg);
        let mut report = PublishReport::default();
        for sub_id in targets {
            let subscriber = st.subs[&sub_id].subscriber.clone();
            let reason = if scripted {
                Some(DropReason::Scripted)
            } else if !st.network.reachable(&msg.sender, &subscriber) {
                Some(DropReason::Partition)
            } else if st.network.drop_probability > 0.0 && {
                let p = st.network.drop_probability;
                st.rng.random::<f64>() < p
            } {
                Some(DropReason::Loss)
            } else {
                None
            };
            if let Some(reason) = reason {
                st.stats.dropped += 1;
                report.dropped.push(DroppedDelivery {
                    subscription: sub_id,
                    subscriber,
                    reason,
                });
                continue;
            }
            let (lo, hi) = st.network.latency_ticks;
            let delay = st.rng.random_range(lo..=hi);
            let at = msg.sent_at + delay;
            let seq = st.sequencer.next();
            st.stats.scheduled += 1;
            report.scheduled.push(ScheduledDelivery {
                subscription: sub_id,
                subscriber: subscriber.clone(),
                deliver_at: at,
            });
            st.pending.push(Reverse(Delivery {
                at,
                seq,
                subscription: sub_id,
                subscriber,
                message: Arc::clone(&msg),
            }));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messaging::TopicName;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn broker(network: NetworkModel) -> SimBroker {
        SimBroker::new(network, 7, Sequencer::default()).unwrap()
    }

    fn msg(topic: &str, sender: &str, at: Tick) -> Message {
        Message::new(
            TopicName::new(topic).unwrap(),
            vec![1u8, 2, 3],
            id(sender),
            at,
        )
    }

    fn drain(b: &SimBroker) -> Vec<Delivery> {
        std::iter::from_fn(|| b.pop()).collect()
    }

    #[test]
    fn direct_and_wildcard_subscriptions_receive_one_delivery_each() {
        let b = broker(NetworkModel::default());
        b.subscribe(&id("a1"), &TopicFilter::new("svc/req").unwrap())
            .unwrap();
        b.publish(msg("svc/req", "c", 0)).unwrap();
        assert_eq!(drain(&b).len(), 1);

        let b = broker(NetworkModel::default());
        b.subscribe(&id("a1"), &TopicFilter::new("svc/#").unwrap())
            .unwrap();
        b.publish(msg("svc/req/x", "c", 0)).unwrap();
        let got = drain(&b);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].subscriber, id("a1"));
    }

    #[test]
    fn duplicate_subscription_is_idempotent() {
        let b = broker(NetworkModel::default());
        let f = TopicFilter::new("t").unwrap();
        let first = b.subscribe(&id("a"), &f).unwrap();
        assert_eq!(b.subscribe(&id("a"), &f).unwrap(), first);
        b.publish(msg("t", "x", 0)).unwrap();
        assert_eq!(drain(&b).len(), 1);
    }

    #[test]
    fn unsubscribe_semantics() {
        let b = broker(NetworkModel::default());
        let s = b
            .subscribe(&id("a"), &TopicFilter::new("t").unwrap())
            .unwrap();
        b.unsubscribe(s).unwrap();
        b.publish(msg("t", "x", 0)).unwrap();
        assert!(drain(&b).is_empty());
        assert_eq!(b.unsubscribe(s), Err(BrokerError::UnknownSubscription(s)));
    }

    #[test]
    fn in_flight_delivery_survives_unsubscribe() {
        let b = broker(NetworkModel::lossless(3, 3));
        let s = b
            .subscribe(&id("a"), &TopicFilter::new("t").unwrap())
            .unwrap();
        b.publish(msg("t", "x", 10)).unwrap();
        b.unsubscribe(s).unwrap();
        let got = drain(&b);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].at, 13);
    }

    #[test]
    fn loss_and_partitions() {
        let b = broker(NetworkModel::default());
        b.subscribe(&id("a"), &TopicFilter::new("t").unwrap())
            .unwrap();
        b.subscribe(&id("b"), &TopicFilter::new("t").unwrap())
            .unwrap();
        b.publish(msg("t", "x", 0)).unwrap();
        assert_eq!(drain(&b).len(), 2);

        let lossy = broker(NetworkModel {
            drop_probability: 1.0,
            ..NetworkModel::default()
        });
        lossy
            .subscribe(&id("a"), &TopicFilter::new("t").unwrap())
            .unwrap();
        let report = lossy.publish(msg("t", "x", 0)).unwrap();
        assert_eq!(report.dropped[0].reason, DropReason::Loss);
        assert!(drain(&lossy).is_empty());

        let split = broker(NetworkModel {
            partitions: vec![[id("x")].into(), [id("a")].into(), [id("b")].into()],
            ..NetworkModel::default()
        });
        split
            .subscribe(&id("a"), &TopicFilter::new("t").unwrap())
            .unwrap();
        split
            .subscribe(&id("b"), &TopicFilter::new("t").unwrap())
            .unwrap();
        let report = split.publish(msg("t", "x", 0)).unwrap();
        assert!(report
            .dropped
            .iter()
            .all(|d| d.reason == DropReason::Partition));
        assert!(drain(&split).is_empty());
    }

    #[test]
    fn zero_subscribers_is_silent() {
        let b = broker(NetworkModel::default());
        let report = b.publish(msg("nobody/home", "x", 0)).unwrap();
        assert!(report.scheduled.is_empty() && report.dropped.is_empty());
    }

    #[test]
    fn payload_limit() {
        let b = broker(NetworkModel::default()).with_max_payload(2);
        assert_eq!(
            b.publish(msg("t", "x", 0)),
            Err(BrokerError::PayloadTooLarge { len: 3, max: 2 })
        );
    }

    #[test]
    fn scripted_drop_consumes_matching_publishes_only() {
        let b = broker(NetworkModel::default());
        b.subscribe(&id("a"), &TopicFilter::new("#").unwrap())
            .unwrap();
        b.drop_next(TopicFilter::new("svc/#").unwrap(), 1);
        b.publish(msg("other", "x", 0)).unwrap();
        b.publish(msg("svc/req", "x", 0)).unwrap();
        b.publish(msg("svc/req", "x", 0)).unwrap();
        assert_eq!(drain(&b).len(), 2);
    }

    #[test]
    fn deliveries_pop_in_tick_then_sequence_order() {
        let b = broker(NetworkModel::lossless(1, 10));
        for i in 0..20 {
            b.subscribe(&id(&format!("a{i}")), &TopicFilter::new("t").unwrap())
                .unwrap();
        }
        b.publish(msg("t", "x", 0)).unwrap();
        b.publish(msg("t", "x", 0)).unwrap();
        let got = drain(&b);
        assert!(got
            .windows(2)
            .all(|w| (w[0].at, w[0].seq) < (w[1].at, w[1].seq)));
        assert!(got.iter().all(|d| (1..=10).contains(&d.at)));
    }
}
