//! Loading coordinator: one per service cluster.
//!
//! Every coordinator hears every client request on the shared service topic,
//! opens a round for it and broadcasts the rank of its least-loaded live
//! controller (or an abstention) on `election/<task>/rank`. Once a round has
//! heard from every coordinator, or its window closes, each coordinator
//! elects the global argmin. The coordinator owning the winner dispatches the
//! task through its own request courier to `ctrl/<winner>/task`, announces the
//! result on `election/<task>/result`, and relays the controller's response
//! to the client's reply topic.
//!
//! Controllers report load on runtime heartbeats to `hb/<coordinator>`. A
//! controller that stays silent longer than `interval * misses` is suspected;
//! its in-flight tasks are orphaned and re-elected under the next attempt
//! number.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    select_candidate, CandidateInfo, ElectionBook, ElectionError, HeartbeatState, LoadRank, RoundId,
};
use crate::agent::{AgentBehavior, AgentContext};
use crate::ids::{AgentId, CorrelationId, TaskId};
use crate::log::{EventKind, EventRecord};
use crate::logistics::{
    record_malformed, ClientLogistics, EnvelopeError, RequestEnvelope, RequestOutcome,
    ResponseLogistic, RetryPolicy, ServiceRequest,
};
use crate::messaging::{Message, TopicFilter, TopicName};
use crate::Tick;

pub const TASK_TOPIC_SUFFIX: &str = "task";
const ELECTION_PREFIX: &str = "election";
const HEARTBEAT_PREFIX: &str = "hb";

/// Task descriptor carried by client requests and controller dispatches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub task: TaskId,
    pub work_units: f64,
    /// Election attempt this request belongs to.
    #[serde(default)]
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl TaskRequest {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("plain struct")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Done,
    NoService,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResponse {
    pub task: TaskId,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<AgentId>,
}

impl TaskResponse {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("plain struct")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

/// Load piggybacked on controller heartbeats: three big-endian f64s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadReport {
    pub pending_work: f64,
    pub capacity: f64,
    /// Cumulative work units accepted since start.
    pub accepted_work: f64,
}

impl LoadReport {
    pub const LEN: usize = 24;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..8].copy_from_slice(&self.pending_work.to_be_bytes());
        out[8..16].copy_from_slice(&self.capacity.to_be_bytes());
        out[16..].copy_from_slice(&self.accepted_work.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::LEN {
            return None;
        }
        let f = |i: usize| f64::from_be_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        Some(Self {
            pending_work: f(0),
            capacity: f(8),
            accepted_work: f(16),
        })
    }
}

/// What a coordinator needs to dispatch and answer a task on behalf of the
/// client; carried on ranks so a round can be served even if the rank beats
/// the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub reply_topic: TopicName,
    pub correlation: CorrelationId,
    pub request: TaskRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMessage {
    pub coordinator: AgentId,
    /// `None` abstains: no live candidate in this cluster.
    pub candidate: Option<AgentId>,
    pub value: Option<f64>,
    pub descriptor: TaskDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMessage {
    pub round: u32,
    pub coordinator: AgentId,
    pub winner: AgentId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinatorConfig {
    pub service_topic: TopicName,
    /// Every coordinator, this one included.
    pub peers: Vec<AgentId>,
    /// Controllers this coordinator may dispatch to.
    pub cluster: Vec<AgentId>,
    pub window_ticks: Tick,
    pub heartbeat_interval: Tick,
    pub misses_allowed: u32,
    pub dispatch_policy: RetryPolicy,
    pub max_requeues: u32,
    pub requeue_delay_ticks: Tick,
}

impl CoordinatorConfig {
    pub fn rank_topic(task: TaskId) -> TopicName {
        TopicName::new(format!("{ELECTION_PREFIX}/{}/rank", task.0)).expect("valid")
    }

    pub fn result_topic(task: TaskId) -> TopicName {
        TopicName::new(format!("{ELECTION_PREFIX}/{}/result", task.0)).expect("valid")
    }

    pub fn heartbeat_topic(coordinator: &AgentId) -> TopicName {
        TopicName::new(format!("{HEARTBEAT_PREFIX}/{coordinator}")).expect("valid")
    }

    pub fn task_topic(controller: &AgentId) -> TopicName {
        TopicName::new(format!("ctrl/{controller}/{TASK_TOPIC_SUFFIX}")).expect("valid")
    }
}

#[derive(Debug, Clone)]
struct TaskCtx {
    descriptor: TaskDescriptor,
    requeues: u32,
}

#[derive(Debug, Clone)]
struct Dispatch {
    task: TaskId,
    controller: AgentId,
}

#[derive(Debug, Clone, Copy)]
enum TimerAction {
    Deadline(RoundId),
    Requeue(TaskId),
}

const HEARTBEAT_CHECK: u64 = 0;

pub struct LoadingCoordinator {
    cfg: CoordinatorConfig,
    cluster: BTreeSet<AgentId>,
    book: ElectionBook,
    hb: HeartbeatState,
    reports: BTreeMap<AgentId, LoadReport>,
    dispatched_work: BTreeMap<AgentId, f64>,
    logistics: ClientLogistics,
    tasks: BTreeMap<TaskId, TaskCtx>,
    dispatches: BTreeMap<CorrelationId, Dispatch>,
    in_flight: BTreeMap<AgentId, BTreeMap<TaskId, CorrelationId>>,
    timers: BTreeMap<u64, TimerAction>,
    next_timer: u64,
}

impl LoadingCoordinator {
    pub fn new(cfg: CoordinatorConfig) -> Self {
        let hb = HeartbeatState::new(cfg.heartbeat_interval, cfg.misses_allowed);
        Self {
            cluster: cfg.cluster.iter().cloned().collect(),
            cfg,
            book: ElectionBook::new(),
            hb,
            reports: BTreeMap::new(),
            dispatched_work: BTreeMap::new(),
            logistics: ClientLogistics::new(),
            tasks: BTreeMap::new(),
            dispatches: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            timers: BTreeMap::new(),
            next_timer: 1,
        }
    }

    pub fn book(&self) -> &ElectionBook {
        &self.book
    }

    pub fn heartbeats(&self) -> &HeartbeatState {
        &self.hb
    }

    pub fn in_flight_dispatches(&self) -> usize {
        self.dispatches.len()
    }

    /// Candidate view of the live part of this cluster: last reported queue
    /// plus work dispatched but not yet acknowledged.
    pub fn candidates(&self) -> Vec<CandidateInfo> {
        self.cluster
            .iter()
            .filter(|c| !self.hb.is_suspected(c))
            .filter_map(|c| {
                let r = self.reports.get(c)?;
                let sent = self.dispatched_work.get(c).copied().unwrap_or(0.0);
                let in_transit = (sent - r.accepted_work).max(0.0);
                Some(CandidateInfo {
                    agent: c.clone(),
                    pending_work: r.pending_work.max(0.0) + in_transit,
                    capacity: r.capacity,
                })
            })
            .collect()
    }

    fn is_leader(&self, me: &AgentId) -> bool {
        self.cfg.peers.iter().min() == Some(me)
    }

    fn arm(&mut self, ctx: &mut AgentContext<'_>, at: Tick, action: TimerAction) {
        let key = self.next_timer;
        self.next_timer += 1;
        self.timers.insert(key, action);
        ctx.set_timer(at, key);
    }

    fn handle_request(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) {
        let req = match ServiceRequest::parse(msg) {
            Ok(r) => r,
            Err(e) => return record_malformed(ctx, msg, &e),
        };
        let task_req = match TaskRequest::decode(&req.body) {
            Ok(t) => t,
            Err(e) => return record_malformed(ctx, msg, &EnvelopeError::Body(e.to_string())),
        };
        let descriptor = TaskDescriptor {
            reply_topic: req.reply_topic,
            correlation: req.correlation,
            request: task_req,
        };
        self.ensure_round(ctx, descriptor);
    }

    /// Opens the round described by `d` unless it, or a later attempt for the
    /// same task, is already known. Returns the round id when it is open.
    fn ensure_round(&mut self, ctx: &mut AgentContext<'_>, d: TaskDescriptor) -> Option<RoundId> {
        let task = d.request.task;
        let id = RoundId::new(task, d.request.round);
        if self.book.contains(&id) {
            return Some(id);
        }
        if self
            .book
            .latest_attempt(task)
            .is_some_and(|a| a > id.attempt)
        {
            return None;
        }
        let now = ctx.now();
        self.book.forget_before(task, id.attempt);
        self.book.open(id, now, self.cfg.window_ticks);
        let requeues = self.tasks.get(&task).map_or(0, |t| t.requeues);
        self.tasks.insert(
            task,
            TaskCtx {
                descriptor: d.clone(),
                requeues,
            },
        );
        ctx.record(
            EventRecord::new(now, EventKind::RoundOpen, ctx.id().as_str())
                .task(task)
                .round(id.attempt)
                .detail(json!({
                    "deadline": now + self.cfg.window_ticks,
                    "reason": d.request.reason,
                })),
        );
        self.arm(ctx, now + self.cfg.window_ticks, TimerAction::Deadline(id));

        let best = select_candidate(&self.candidates(), id).ok();
        let rank = RankMessage {
            coordinator: ctx.id().clone(),
            candidate: best.as_ref().map(|r| r.candidate.clone()),
            value: best.as_ref().map(|r| r.value),
            descriptor: d,
        };
        ctx.record(
            EventRecord::new(now, EventKind::Rank, ctx.id().as_str())
                .task(task)
                .round(id.attempt)
                .detail(json!({ "candidate": rank.candidate, "value": rank.value })),
        );
        let payload = serde_json::to_vec(&rank).expect("plain struct");
        let _ = ctx.publish(CoordinatorConfig::rank_topic(task), payload, None);
        Some(id)
    }

    fn handle_rank(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) {
        let Ok(rank) = serde_json::from_slice::<RankMessage>(&msg.payload) else {
            return;
        };
        let task = rank.descriptor.request.task;
        let id = RoundId::new(task, rank.descriptor.request.round);
        let known = self.book.contains(&id);
        if !known && self.ensure_round(ctx, rank.descriptor.clone()).is_none() {
            self.book.late_ranks += 1;
            self.record_late(ctx, id, &rank);
            return;
        }
        let load = match (&rank.candidate, rank.value) {
            (Some(c), Some(v)) if v.is_finite() && v >= 0.0 => Some(LoadRank {
                candidate: c.clone(),
                value: v,
                round: id,
            }),
            _ => None,
        };
        if let Some(super::Collect::Late) = self.book.collect(&id, &rank.coordinator, load) {
            self.record_late(ctx, id, &rank);
            return;
        }
        let complete = self
            .book
            .get(&id)
            .is_some_and(|r| r.heard_from_all(&self.cfg.peers));
        if complete {
            self.try_decide(ctx, id, true);
        }
    }

    fn record_late(&self, ctx: &mut AgentContext<'_>, id: RoundId, rank: &RankMessage) {
        ctx.record(
            EventRecord::new(ctx.now(), EventKind::LateRank, ctx.id().as_str())
                .task(id.task)
                .round(id.attempt)
                .detail(json!({ "from": rank.coordinator.as_str() })),
        );
    }

    fn try_decide(&mut self, ctx: &mut AgentContext<'_>, id: RoundId, complete: bool) {
        let now = ctx.now();
        let Some(round) = self.book.get_mut(&id) else {
            return;
        };
        if round.is_closed() {
            return;
        }
        let result = round.decide(now, complete);
        let ranks: Vec<_> = round
            .ranks
            .values()
            .map(|r| json!([r.candidate.as_str(), r.value]))
            .collect();
        let opened_at = round.opened_at;
        let voters = round.voters.len();
        let reason = self
            .tasks
            .get(&id.task)
            .and_then(|t| t.descriptor.request.reason.clone());
        match result {
            Ok(winner) => {
                let owner = self.cluster.contains(&winner);
                ctx.record(
                    EventRecord::new(now, EventKind::Decide, ctx.id().as_str())
                        .task(id.task)
                        .round(id.attempt)
                        .detail(json!({
                            "winner": winner.as_str(),
                            "owner": owner,
                            "opened_at": opened_at,
                            "voters": voters,
                            "reason": reason,
                            "ranks": ranks,
                        })),
                );
                if owner {
                    self.assign(ctx, id, winner);
                }
            }
            Err(ElectionError::ElectionFailed(_)) => {
                ctx.record(
                    EventRecord::new(now, EventKind::ElectionFailed, ctx.id().as_str())
                        .task(id.task)
                        .round(id.attempt)
                        .detail(json!({ "opened_at": opened_at, "voters": voters })),
                );
                if self.is_leader(ctx.id()) {
                    self.requeue_or_reject(ctx, id.task);
                }
            }
            Err(_) => {}
        }
    }

    fn requeue_or_reject(&mut self, ctx: &mut AgentContext<'_>, task: TaskId) {
        let Some(t) = self.tasks.get_mut(&task) else {
            return;
        };
        if t.requeues < self.cfg.max_requeues {
            t.requeues += 1;
            let at = ctx.now() + self.cfg.requeue_delay_ticks;
            self.arm(ctx, at, TimerAction::Requeue(task));
            return;
        }
        let d = t.descriptor.clone();
        ctx.record(
            EventRecord::new(ctx.now(), EventKind::NoService, ctx.id().as_str())
                .task(task)
                .detail(json!({ "requeues": t.requeues })),
        );
        let body = TaskResponse {
            task,
            status: TaskStatus::NoService,
            controller: None,
        };
        let _ = ResponseLogistic {
            reply_topic: d.reply_topic,
            correlation: d.correlation,
            service: ctx.id().clone(),
        }
        .respond(ctx, body.encode());
    }

    fn assign(&mut self, ctx: &mut AgentContext<'_>, id: RoundId, winner: AgentId) {
        debug_assert!(self
            .book
            .get(&id)
            .is_some_and(|r| r.check_assignment(&winner).is_ok()));
        if self.hb.is_suspected(&winner) {
            self.reelect(ctx, id.task, "winner_suspected");
            return;
        }
        let Some(t) = self.tasks.get(&id.task) else {
            return;
        };
        let mut request = t.descriptor.request.clone();
        request.round = id.attempt;
        let work = request.work_units;
        let topic = CoordinatorConfig::task_topic(&winner);
        let Ok(corr) =
            self.logistics
                .send_request(ctx, topic, &request.encode(), self.cfg.dispatch_policy)
        else {
            return;
        };
        *self.dispatched_work.entry(winner.clone()).or_default() += work;
        self.in_flight
            .entry(winner.clone())
            .or_default()
            .insert(id.task, corr.clone());
        self.dispatches.insert(
            corr.clone(),
            Dispatch {
                task: id.task,
                controller: winner.clone(),
            },
        );
        ctx.record(
            EventRecord::new(ctx.now(), EventKind::TaskDispatched, ctx.id().as_str())
                .task(id.task)
                .round(id.attempt)
                .detail(json!({ "controller": winner.as_str(), "correlation": corr.as_str() })),
        );
        let result = ResultMessage {
            round: id.attempt,
            coordinator: ctx.id().clone(),
            winner,
        };
        let _ = ctx.publish(
            CoordinatorConfig::result_topic(id.task),
            serde_json::to_vec(&result).expect("plain struct"),
            None,
        );
    }

    /// Re-announces the task under the next attempt number on the service
    /// topic so every coordinator opens the replacement round.
    fn reelect(&mut self, ctx: &mut AgentContext<'_>, task: TaskId, reason: &str) {
        let Some(t) = self.tasks.get(&task) else {
            return;
        };
        let next = self.book.latest_attempt(task).map_or(0, |a| a + 1);
        let mut request = t.descriptor.request.clone();
        request.round = next;
        request.reason = Some(reason.to_string());
        let env = RequestEnvelope::new(
            &t.descriptor.reply_topic,
            &t.descriptor.correlation,
            request.encode(),
        );
        if let Ok(bytes) = env.encode() {
            let _ = ctx.publish(
                self.cfg.service_topic.clone(),
                bytes,
                Some(t.descriptor.correlation.clone()),
            );
        }
    }

    fn handle_outcomes(&mut self, ctx: &mut AgentContext<'_>, outcomes: Vec<RequestOutcome>) {
        for outcome in outcomes {
            match outcome {
                RequestOutcome::Succeeded {
                    correlation, body, ..
                } => {
                    let Some(d) = self.dispatches.remove(&correlation) else {
                        continue;
                    };
                    self.clear_in_flight(&d);
                    if let Some(t) = self.tasks.get(&d.task) {
                        let _ = ResponseLogistic {
                            reply_topic: t.descriptor.reply_topic.clone(),
                            correlation: t.descriptor.correlation.clone(),
                            service: ctx.id().clone(),
                        }
                        .respond(ctx, body);
                    }
                }
                RequestOutcome::TimedOut { correlation, .. } => {
                    let Some(d) = self.dispatches.remove(&correlation) else {
                        continue;
                    };
                    self.clear_in_flight(&d);
                    self.reelect(ctx, d.task, "dispatch_timeout");
                }
            }
        }
        self.logistics.prune();
    }

    fn clear_in_flight(&mut self, d: &Dispatch) {
        if let Some(m) = self.in_flight.get_mut(&d.controller) {
            m.remove(&d.task);
        }
    }

    fn check_heartbeats(&mut self, ctx: &mut AgentContext<'_>) {
        let now = ctx.now();
        for ctrl in self.hb.heartbeat_tick(now) {
            let orphans = self.in_flight.remove(&ctrl).unwrap_or_default();
            ctx.record(
                EventRecord::new(now, EventKind::Suspect, ctx.id().as_str())
                    .detail(json!({ "controller": ctrl.as_str(), "orphans": orphans.len() })),
            );
            for (task, corr) in orphans {
                self.dispatches.remove(&corr);
                self.logistics.abandon(ctx, &corr);
                ctx.record(
                    EventRecord::new(now, EventKind::TaskOrphaned, ctx.id().as_str())
                        .task(task)
                        .detail(json!({ "controller": ctrl.as_str() })),
                );
                self.reelect(ctx, task, "reelection");
            }
        }
        ctx.set_timer(now + self.cfg.heartbeat_interval, HEARTBEAT_CHECK);
    }
}

impl AgentBehavior for LoadingCoordinator {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) {
        let me = ctx.id().clone();
        let filters = [
            TopicFilter::from(self.cfg.service_topic.clone()),
            TopicFilter::new(format!("{ELECTION_PREFIX}/#")).expect("valid"),
            TopicFilter::from(CoordinatorConfig::heartbeat_topic(&me)),
        ];
        for f in &filters {
            ctx.subscribe(f).expect("valid filter");
        }
        let now = ctx.now();
        for c in &self.cfg.cluster {
            self.hb.register(c.clone(), now);
        }
        ctx.set_timer(now + self.cfg.heartbeat_interval, HEARTBEAT_CHECK);
    }

    fn on_message(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) {
        let topic = msg.topic.as_str();
        if msg.topic == self.cfg.service_topic {
            self.handle_request(ctx, msg);
        } else if let Some(rest) = topic.strip_prefix("election/") {
            if rest.ends_with("/rank") {
                self.handle_rank(ctx, msg);
            }
        } else if topic.starts_with("hb/") {
            if self.cluster.contains(&msg.sender) {
                self.hb.observe(&msg.sender, ctx.now());
                if let Some(r) = LoadReport::decode(&msg.payload) {
                    self.reports.insert(msg.sender.clone(), r);
                }
            }
        } else if let Some(outcome) = self.logistics.handle_response(ctx, msg) {
            self.handle_outcomes(ctx, vec![outcome]);
        }
    }

    fn on_timer(&mut self, ctx: &mut AgentContext<'_>, key: u64) {
        if key == ClientLogistics::TIMER_KEY {
            let outcomes = self.logistics.on_tick(ctx);
            self.handle_outcomes(ctx, outcomes);
            return;
        }
        if key == HEARTBEAT_CHECK {
            self.check_heartbeats(ctx);
            return;
        }
        match self.timers.remove(&key) {
            Some(TimerAction::Deadline(id)) => self.try_decide(ctx, id, false),
            Some(TimerAction::Requeue(task)) => self.reelect(ctx, task, "requeue"),
            None => {}
        }
    }
}
