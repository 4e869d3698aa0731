//! Deterministic single-threaded agent runtime.
//!
//! One global queue ordered by `(tick, sequence)` drives both transport
//! deliveries and timers. Handlers of an agent run one at a time; a handler
//! may declare processing cost with [`AgentContext::charge`], which pushes
//! out the agent's busy horizon. Messages a handler publishes leave when the
//! handler finishes, so a backlog delays an agent's output but never its view
//! of arrivals.

use std::any::Any;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use serde_json::json;
use thiserror::Error;

use crate::agent::{AgentBehavior, AgentState, HolonNode};
use crate::ids::{AgentId, CorrelationId};
use crate::log::{EventKind, EventLog, EventRecord, LogLevel};
use crate::messaging::{
    Broker, BrokerError, Message, NetworkError, NetworkModel, PublishReport, SimBroker,
    SubscriptionId, TopicFilter, TopicName,
};
use crate::sequencer::Sequencer;
use crate::Tick;

/// Resolution of handler cost accounting.
pub const SUBTICKS_PER_TICK: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("parent {0} is not active")]
    ParentUnavailable(AgentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} already exists")]
    DuplicateAgent(AgentId),
    #[error("moving {child} under {parent} would create a cycle")]
    WouldCycle { child: AgentId, parent: AgentId },
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RuntimeStats {
    pub handler_runs: u64,
    pub discarded_deliveries: u64,
    pub heartbeats: u64,
}

struct AgentSlot {
    node: HolonNode,
    behavior: Option<Box<dyn AgentBehavior>>,
    subscriptions: BTreeSet<SubscriptionId>,
    busy_until: u64,
    active_since: Option<Tick>,
    active_until: Option<Tick>,
    heartbeat: Option<(TopicName, Tick)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TimerKind {
    Agent(u64),
    Heartbeat,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TimerEntry {
    at: Tick,
    seq: u64,
    agent: AgentId,
    kind: TimerKind,
}

impl PartialOrd for TimerEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimerEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

enum Hook<'m> {
    Start,
    Message(&'m Message),
    Timer(u64),
    Stop,
}

struct Outgoing {
    topic: TopicName,
    payload: Arc<[u8]>,
    correlation: Option<CorrelationId>,
}

pub struct Runtime {
    broker: SimBroker,
    sequencer: Sequencer,
    now: Tick,
    agents: BTreeMap<AgentId, AgentSlot>,
    timers: BinaryHeap<Reverse<TimerEntry>>,
    log: EventLog,
    stats: RuntimeStats,
    max_payload: usize,
}

impl Runtime {
    pub fn new(network: NetworkModel, seed: u64, level: LogLevel) -> Result<Self, NetworkError> {
        let sequencer = Sequencer::default();
        let broker = SimBroker::new(network, seed, sequencer.clone())?;
        Ok(Self {
            broker,
            sequencer,
            now: 0,
            agents: BTreeMap::new(),
            timers: BinaryHeap::new(),
            log: EventLog::new(level),
            stats: RuntimeStats::default(),
            max_payload: crate::messaging::DEFAULT_MAX_PAYLOAD,
        })
    }

    pub fn broker(&self) -> &SimBroker {
        &self.broker
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn stats(&self) -> RuntimeStats {
        self.stats
    }

    pub fn node(&self, id: &AgentId) -> Option<&HolonNode> {
        self.agents.get(id).map(|s| &s.node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &HolonNode> {
        self.agents.values().map(|s| &s.node)
    }

    pub fn behavior<T: AgentBehavior>(&self, id: &AgentId) -> Option<&T> {
        let b: &dyn AgentBehavior = self.agents.get(id)?.behavior.as_deref()?;
        (b as &dyn Any).downcast_ref::<T>()
    }

    pub fn behavior_mut<T: AgentBehavior>(&mut self, id: &AgentId) -> Option<&mut T> {
        let b: &mut dyn AgentBehavior = self.agents.get_mut(id)?.behavior.as_deref_mut()?;
        (b as &mut dyn Any).downcast_mut::<T>()
    }

    /// Sum over agents of the ticks each spent Active, up to now.
    pub fn live_agent_ticks(&self) -> u64 {
        self.agents
            .values()
            .filter_map(|s| {
                let since = s.active_since?;
                Some(s.active_until.unwrap_or(self.now).saturating_sub(since))
            })
            .sum()
    }

    pub fn spawn(
        &mut self,
        id: AgentId,
        behavior: Box<dyn AgentBehavior>,
        parent: Option<&AgentId>,
    ) -> Result<AgentId, AgentError> {
        if self.agents.contains_key(&id) {
            return Err(AgentError::DuplicateAgent(id));
        }
        if let Some(p) = parent {
            match self.agents.get(p) {
                Some(slot) if slot.node.state == AgentState::Active => {}
                Some(_) => return Err(AgentError::ParentUnavailable(p.clone())),
                None => return Err(AgentError::UnknownAgent(p.clone())),
            }
        }
        self.agents.insert(
            id.clone(),
            AgentSlot {
                node: HolonNode::new(id.clone(), parent.cloned()),
                behavior: Some(behavior),
                subscriptions: BTreeSet::new(),
                busy_until: 0,
                active_since: None,
                active_until: None,
                heartbeat: None,
            },
        );
        if let Some(p) = parent {
            self.agents
                .get_mut(p)
                .expect("checked")
                .node
                .children
                .push(id.clone());
        }
        let mut rec = EventRecord::new(self.now, EventKind::Spawn, id.as_str());
        if let Some(p) = parent {
            rec = rec.detail(json!({ "parent": p.as_str() }));
        }
        self.log.push(rec);
        self.invoke(&id, self.now, Hook::Start);
        let slot = self.agents.get_mut(&id).expect("just inserted");
        if slot.node.state == AgentState::Initializing {
            slot.node.transition(AgentState::Active);
            slot.active_since = Some(self.now);
        }
        Ok(id)
    }

    /// Depth-first teardown: every descendant reaches Terminated before the
    /// node itself, and the whole subtree's subscriptions are removed.
    pub fn terminate(&mut self, id: &AgentId) -> Result<(), AgentError> {
        if !self.agents.contains_key(id) {
            return Err(AgentError::UnknownAgent(id.clone()));
        }
        self.terminate_subtree(id);
        Ok(())
    }

    fn terminate_subtree(&mut self, id: &AgentId) {
        let slot = self.agents.get_mut(id).expect("known agent");
        let was = slot.node.state;
        if matches!(was, AgentState::Terminated | AgentState::Terminating) {
            return;
        }
        if was == AgentState::Initializing {
            slot.node.state = AgentState::Active;
        }
        slot.node.transition(AgentState::Terminating);
        let children = slot.node.children.clone();
        for child in &children {
            self.terminate_subtree(child);
        }
        if was != AgentState::Failed {
            self.invoke(id, self.now, Hook::Stop);
        }
        let now = self.now;
        let slot = self.agents.get_mut(id).expect("known agent");
        for sub in std::mem::take(&mut slot.subscriptions) {
            let _ = self.broker.unsubscribe(sub);
        }
        slot.node.transition(AgentState::Terminated);
        slot.heartbeat = None;
        if slot.active_until.is_none() {
            slot.active_until = Some(now);
        }
        self.log
            .push(EventRecord::new(now, EventKind::Terminate, id.as_str()));
    }

    /// Crash-stop. Subscriptions stay registered; deliveries are discarded.
    /// Failing a non-active agent is a no-op.
    pub fn fail(&mut self, id: &AgentId) -> Result<(), AgentError> {
        let now = self.now;
        let slot = self
            .agents
            .get_mut(id)
            .ok_or_else(|| AgentError::UnknownAgent(id.clone()))?;
        if slot.node.state != AgentState::Active {
            return Ok(());
        }
        slot.node.transition(AgentState::Failed);
        slot.active_until = Some(now);
        self.log
            .push(EventRecord::new(now, EventKind::Fail, id.as_str()));
        Ok(())
    }

    /// Moves `child` (and its subtree) under `new_parent`, or makes it a root.
    pub fn reparent(
        &mut self,
        child: &AgentId,
        new_parent: Option<&AgentId>,
    ) -> Result<(), AgentError> {
        if !self.agents.contains_key(child) {
            return Err(AgentError::UnknownAgent(child.clone()));
        }
        if let Some(p) = new_parent {
            let slot = self
                .agents
                .get(p)
                .ok_or_else(|| AgentError::UnknownAgent(p.clone()))?;
            if slot.node.state != AgentState::Active {
                return Err(AgentError::ParentUnavailable(p.clone()));
            }
            let mut cursor = Some(p.clone());
            while let Some(c) = cursor {
                if &c == child {
                    return Err(AgentError::WouldCycle {
                        child: child.clone(),
                        parent: p.clone(),
                    });
                }
                cursor = self.agents[&c].node.parent.clone();
            }
        }
        let old = self.agents[child].node.parent.clone();
        if let Some(old) = old {
            self.agents
                .get_mut(&old)
                .expect("parent exists")
                .node
                .children
                .retain(|c| c != child);
        }
        if let Some(p) = new_parent {
            self.agents
                .get_mut(p)
                .expect("checked")
                .node
                .children
                .push(child.clone());
        }
        self.agents.get_mut(child).expect("checked").node.parent = new_parent.cloned();
        self.log.push(
            EventRecord::new(self.now, EventKind::Reparent, child.as_str())
                .detail(json!({ "parent": new_parent.map(AgentId::as_str) })),
        );
        Ok(())
    }

    pub fn schedule_timer(&mut self, agent: &AgentId, at: Tick, key: u64) {
        self.push_timer(agent.clone(), at, TimerKind::Agent(key));
    }

    pub fn schedule_failure(&mut self, agent: &AgentId, at: Tick) {
        self.push_timer(agent.clone(), at, TimerKind::Fail);
    }

    fn push_timer(&mut self, agent: AgentId, at: Tick, kind: TimerKind) {
        let seq = self.sequencer.next();
        self.timers.push(Reverse(TimerEntry {
            at,
            seq,
            agent,
            kind,
        }));
    }

    /// Publishes on behalf of `sender` at the current tick, bypassing any
    /// agent handler. Used by harnesses and tests to inject traffic.
    pub fn publish_as(
        &mut self,
        sender: &AgentId,
        topic: TopicName,
        payload: impl Into<Arc<[u8]>>,
        correlation: Option<CorrelationId>,
    ) -> Result<PublishReport, BrokerError> {
        let mut msg = Message::new(topic, payload, sender.clone(), self.now);
        msg.correlation = correlation;
        self.publish_logged(msg)
    }

    fn publish_logged(&mut self, msg: Message) -> Result<PublishReport, BrokerError> {
        let full = self.log.level() == LogLevel::Full;
        let header = full.then(|| {
            (
                msg.sent_at,
                msg.sender.clone(),
                msg.topic.clone(),
                msg.correlation.clone(),
            )
        });
        let report = self.broker.publish(msg)?;
        if let Some((tick, sender, topic, corr)) = header {
            self.log.push(
                EventRecord::new(tick, EventKind::Publish, sender.as_str())
                    .topic(topic.as_str())
                    .detail(json!({
                        "correlation": corr.as_ref().map(CorrelationId::as_str),
                        "scheduled": report.scheduled.len(),
                        "dropped": report.dropped.len(),
                    })),
            );
            for d in &report.dropped {
                self.log.push(
                    EventRecord::new(tick, EventKind::Drop, d.subscriber.as_str())
                        .topic(topic.as_str())
                        .detail(json!({ "from": sender.as_str(), "reason": d.reason })),
                );
            }
        }
        Ok(report)
    }

    /// Hands one delivery to an agent. Non-active recipients drop it silently
    /// (counted as discarded).
    pub fn dispatch(&mut self, id: &AgentId, msg: &Message) {
        let active = self
            .agents
            .get(id)
            .is_some_and(|s| s.node.state == AgentState::Active);
        if !active {
            self.stats.discarded_deliveries += 1;
            if self.log.wants(EventKind::Discard) {
                self.log.push(
                    EventRecord::new(self.now, EventKind::Discard, id.as_str())
                        .topic(msg.topic.as_str()),
                );
            }
            return;
        }
        self.invoke(id, self.now, Hook::Message(msg));
    }

    fn invoke(&mut self, id: &AgentId, at: Tick, hook: Hook<'_>) {
        let Some(slot) = self.agents.get_mut(id) else {
            return;
        };
        let Some(mut behavior) = slot.behavior.take() else {
            return;
        };
        let start = (at * SUBTICKS_PER_TICK).max(slot.busy_until);
        self.stats.handler_runs += 1;
        if self.log.wants(EventKind::HandlerStart) {
            self.log
                .push(EventRecord::new(at, EventKind::HandlerStart, id.as_str()));
        }
        let mut ctx = AgentContext {
            rt: self,
            id: id.clone(),
            now: at,
            start,
            cost: 0,
            outbox: Vec::new(),
            deferred_terminations: Vec::new(),
        };
        match hook {
            Hook::Start => behavior.on_start(&mut ctx),
            Hook::Message(m) => behavior.on_message(&mut ctx, m),
            Hook::Timer(k) => behavior.on_timer(&mut ctx, k),
            Hook::Stop => behavior.on_stop(&mut ctx),
        }
        let AgentContext {
            cost,
            outbox,
            deferred_terminations,
            ..
        } = ctx;
        let finish = start + cost;
        let send_at = finish.div_ceil(SUBTICKS_PER_TICK).max(at);
        let slot = self.agents.get_mut(id).expect("slot outlives handler");
        slot.busy_until = slot.busy_until.max(finish);
        slot.behavior = Some(behavior);
        for out in outbox {
            let mut msg = Message::new(out.topic, out.payload, id.clone(), send_at);
            msg.correlation = out.correlation;
            // Size was checked when the handler queued the message.
            let _ = self.publish_logged(msg);
        }
        if self.log.wants(EventKind::HandlerEnd) {
            self.log.push(EventRecord::new(
                send_at,
                EventKind::HandlerEnd,
                id.as_str(),
            ));
        }
        for target in deferred_terminations {
            let _ = self.terminate(&target);
        }
    }

    fn next_event(&self) -> Option<(Tick, u64, bool)> {
        let d = self.broker.peek();
        let t = self.timers.peek().map(|Reverse(t)| (t.at, t.seq));
        match (d, t) {
            (None, None) => None,
            (Some((a, s)), None) => Some((a, s, true)),
            (None, Some((a, s))) => Some((a, s, false)),
            (Some(d), Some(t)) => Some(if d <= t {
                (d.0, d.1, true)
            } else {
                (t.0, t.1, false)
            }),
        }
    }

    /// Earliest pending event tick, if any.
    pub fn peek_tick(&self) -> Option<Tick> {
        self.next_event().map(|(t, _, _)| t)
    }

    /// Processes one event. Returns false when nothing is pending.
    pub fn step(&mut self) -> bool {
        let Some((at, _, is_delivery)) = self.next_event() else {
            return false;
        };
        self.now = self.now.max(at);
        if is_delivery {
            let d = self.broker.pop().expect("peeked");
            if self.log.wants(EventKind::Deliver) {
                self.log.push(
                    EventRecord::new(d.at, EventKind::Deliver, d.subscriber.as_str())
                        .topic(d.message.topic.as_str())
                        .detail(json!({
                            "from": d.message.sender.as_str(),
                            "sent_at": d.message.sent_at,
                            "correlation": d.message.correlation.as_ref().map(CorrelationId::as_str),
                            "subscription": d.subscription,
                        })),
                );
            }
            self.dispatch(&d.subscriber, &d.message);
        } else {
            let Reverse(t) = self.timers.pop().expect("peeked");
            self.fire_timer(t);
        }
        true
    }

    fn fire_timer(&mut self, t: TimerEntry) {
        let state = self.agents.get(&t.agent).map(|s| s.node.state);
        match t.kind {
            TimerKind::Fail => {
                let _ = self.fail(&t.agent);
            }
            TimerKind::Agent(key) => {
                if state == Some(AgentState::Active) {
                    self.invoke(&t.agent, t.at, Hook::Timer(key));
                }
            }
            TimerKind::Heartbeat => {
                if state != Some(AgentState::Active) {
                    return;
                }
                let slot = &self.agents[&t.agent];
                let Some((topic, interval)) = slot.heartbeat.clone() else {
                    return;
                };
                let payload = slot
                    .behavior
                    .as_ref()
                    .map(|b| b.heartbeat_payload(t.at))
                    .unwrap_or_default();
                self.stats.heartbeats += 1;
                let msg = Message::new(topic, payload, t.agent.clone(), t.at);
                let _ = self.publish_logged(msg);
                self.push_timer(t.agent, t.at + interval, TimerKind::Heartbeat);
            }
        }
    }

    /// Runs every event scheduled at or before `until`, then parks the clock
    /// at `until`.
    pub fn run_until(&mut self, until: Tick) {
        while self.peek_tick().is_some_and(|t| t <= until) {
            self.step();
        }
        self.now = self.now.max(until);
    }

    /// Runs until the queue empties or the next event lies beyond `limit`.
    pub fn run_until_idle(&mut self, limit: Tick) {
        self.run_until(limit.min(self.peek_tick().map_or(self.now, |_| limit)));
    }
}

/// Capability handle passed to behaviour hooks.
pub struct AgentContext<'a> {
    rt: &'a mut Runtime,
    id: AgentId,
    now: Tick,
    start: u64,
    cost: u64,
    outbox: Vec<Outgoing>,
    deferred_terminations: Vec<AgentId>,
}

impl AgentContext<'_> {
    pub fn id(&self) -> &AgentId {
        &self.id
    }

    /// Logical time of the event being handled.
    pub fn now(&self) -> Tick {
        self.now
    }

    /// Tick at which this handler actually got the agent, after any backlog.
    pub fn started_at(&self) -> Tick {
        self.start.div_ceil(SUBTICKS_PER_TICK)
    }

    /// Declares processing cost in 1/1000 tick units.
    pub fn charge(&mut self, subticks: u64) {
        self.cost += subticks;
    }

    /// Queues a message; it leaves when this handler finishes.
    pub fn publish(
        &mut self,
        topic: TopicName,
        payload: impl Into<Arc<[u8]>>,
        correlation: Option<CorrelationId>,
    ) -> Result<(), BrokerError> {
        let payload = payload.into();
        if payload.len() > self.rt.max_payload {
            return Err(BrokerError::PayloadTooLarge {
                len: payload.len(),
                max: self.rt.max_payload,
            });
        }
        self.outbox.push(Outgoing {
            topic,
            payload,
            correlation,
        });
        Ok(())
    }

    pub fn subscribe(&mut self, filter: &TopicFilter) -> Result<SubscriptionId, BrokerError> {
        let sub = self.rt.broker.subscribe(&self.id, filter)?;
        if let Some(slot) = self.rt.agents.get_mut(&self.id) {
            slot.subscriptions.insert(sub);
        }
        Ok(sub)
    }

    pub fn unsubscribe(&mut self, sub: SubscriptionId) -> Result<(), BrokerError> {
        self.rt.broker.unsubscribe(sub)?;
        if let Some(slot) = self.rt.agents.get_mut(&self.id) {
            slot.subscriptions.remove(&sub);
        }
        Ok(())
    }

    pub fn set_timer(&mut self, at: Tick, key: u64) {
        let at = at.max(self.now);
        self.rt
            .push_timer(self.id.clone(), at, TimerKind::Agent(key));
    }

    /// Starts runtime-emitted heartbeats on `topic` every `interval` ticks.
    /// They are not delayed by handler backlog and stop when the agent does.
    pub fn enable_heartbeat(&mut self, topic: TopicName, interval: Tick) {
        let interval = interval.max(1);
        if let Some(slot) = self.rt.agents.get_mut(&self.id) {
            let first = slot.heartbeat.is_none();
            slot.heartbeat = Some((topic, interval));
            if first {
                let at = self.now + interval;
                self.rt
                    .push_timer(self.id.clone(), at, TimerKind::Heartbeat);
            }
        }
    }

    pub fn spawn(
        &mut self,
        id: AgentId,
        behavior: Box<dyn AgentBehavior>,
    ) -> Result<AgentId, AgentError> {
        let parent = self.id.clone();
        self.rt.spawn(id, behavior, Some(&parent))
    }

    /// Takes effect once the current handler returns.
    pub fn terminate(&mut self, id: AgentId) {
        self.deferred_terminations.push(id);
    }

    pub fn record(&mut self, record: EventRecord) {
        self.rt.log.push(record);
    }

    pub fn log_level(&self) -> LogLevel {
        self.rt.log.level()
    }

    pub fn node(&self, id: &AgentId) -> Option<&HolonNode> {
        self.rt.node(id)
    }
}
