//! Swarm participants: AMR clients and controller services.

use std::collections::{BTreeMap, BTreeSet};

use agentflow::agent::{AgentBehavior, AgentContext, SUBTICKS_PER_TICK};
use agentflow::election::{CoordinatorConfig, LoadReport, TaskRequest, TaskResponse, TaskStatus};
use agentflow::ids::{AgentId, CorrelationId, TaskId};
use agentflow::log::{EventKind, EventRecord};
use agentflow::logistics::{
    record_malformed, ClientLogistics, EnvelopeError, RequestOutcome, ResponseLogistic,
    RetryPolicy, ServiceRequest,
};
use agentflow::messaging::{Message, TopicFilter, TopicName};
use agentflow::Tick;
use serde_json::json;

pub fn status_topic(controller: &AgentId) -> TopicName {
    TopicName::new(format!("ctrl/{controller}/status")).expect("valid")
}

fn subticks(ticks: f64) -> u64 {
    (ticks * SUBTICKS_PER_TICK as f64).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedTask {
    pub id: TaskId,
    pub at: Tick,
    pub work_units: f64,
}

/// How a task ended from its issuing AMR's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientOutcome {
    Completed,
    TimedOut,
    Rejected,
}

const STATUS_TIMER: u64 = 0;

/// Autonomous mobile robot: requests controller service for its tasks and
/// reports status to its home controller.
pub struct Amr {
    home: AgentId,
    service_topic: TopicName,
    policy: RetryPolicy,
    status_period: Tick,
    status_phase: Tick,
    plan: Vec<PlannedTask>,
    logistics: ClientLogistics,
    by_correlation: BTreeMap<CorrelationId, TaskId>,
    outcomes: BTreeMap<TaskId, ClientOutcome>,
}

impl Amr {
    pub fn new(
        home: AgentId,
        service_topic: TopicName,
        policy: RetryPolicy,
        status_period: Tick,
        status_phase: Tick,
        plan: Vec<PlannedTask>,
    ) -> Self {
        Self {
            home,
            service_topic,
            policy,
            status_period,
            status_phase,
            plan,
            logistics: ClientLogistics::new(),
            by_correlation: BTreeMap::new(),
            outcomes: BTreeMap::new(),
        }
    }

    pub fn in_flight(&self) -> usize {
        self.logistics.in_flight()
    }

    pub fn outcomes(&self) -> &BTreeMap<TaskId, ClientOutcome> {
        &self.outcomes
    }

    pub fn planned(&self) -> &[PlannedTask] {
        &self.plan
    }

    fn create(&mut self, ctx: &mut AgentContext<'_>, idx: usize) {
        let Some(t) = self.plan.get(idx).copied() else {
            return;
        };
        let body = TaskRequest {
            task: t.id,
            work_units: t.work_units,
            round: 0,
            reason: None,
        }
        .encode();
        ctx.record(
            EventRecord::new(ctx.now(), EventKind::TaskCreated, ctx.id().as_str())
                .task(t.id)
                .detail(json!({ "work_units": t.work_units })),
        );
        if let Ok(k) =
            self.logistics
                .send_request(ctx, self.service_topic.clone(), &body, self.policy)
        {
            self.by_correlation.insert(k, t.id);
        }
    }

    fn settle(&mut self, ctx: &mut AgentContext<'_>, outcome: RequestOutcome) {
        match outcome {
            RequestOutcome::Succeeded {
                correlation, body, ..
            } => {
                let Some(task) = self.by_correlation.remove(&correlation) else {
                    return;
                };
                let status = TaskResponse::decode(&body).map(|r| r.status);
                let (kind, result) = match status {
                    Ok(TaskStatus::NoService) => (EventKind::NoService, ClientOutcome::Rejected),
                    _ => (EventKind::TaskCompleted, ClientOutcome::Completed),
                };
                ctx.record(
                    EventRecord::new(ctx.now(), kind, ctx.id().as_str())
                        .task(task)
                        .detail(json!({ "role": "client" })),
                );
                self.outcomes.insert(task, result);
            }
            RequestOutcome::TimedOut {
                correlation,
                attempts,
            } => {
                let Some(task) = self.by_correlation.remove(&correlation) else {
                    return;
                };
                ctx.record(
                    EventRecord::new(ctx.now(), EventKind::TaskTimedOut, ctx.id().as_str())
                        .task(task)
                        .detail(json!({ "attempts": attempts })),
                );
                self.outcomes.insert(task, ClientOutcome::TimedOut);
            }
        }
    }
}

impl AgentBehavior for Amr {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) {
        let now = ctx.now();
        ctx.set_timer(now + self.status_phase, STATUS_TIMER);
        for (i, t) in self.plan.iter().enumerate() {
            ctx.set_timer(t.at, i as u64 + 1);
        }
    }

    fn on_message(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) {
        if let Some(o) = self.logistics.handle_response(ctx, msg) {
            self.settle(ctx, o);
            self.logistics.prune();
        }
    }

    fn on_timer(&mut self, ctx: &mut AgentContext<'_>, key: u64) {
        match key {
            STATUS_TIMER => {
                let _ = ctx.publish(
                    status_topic(&self.home),
                    ctx.now().to_be_bytes().to_vec(),
                    None,
                );
                ctx.set_timer(ctx.now() + self.status_period, STATUS_TIMER);
            }
            ClientLogistics::TIMER_KEY => {
                for o in self.logistics.on_tick(ctx) {
                    self.settle(ctx, o);
                }
                self.logistics.prune();
            }
            k => self.create(ctx, (k - 1) as usize),
        }
    }
}

struct Job {
    responder: ResponseLogistic,
}

/// Service agent executing tasks FIFO at a fixed capacity. Status reports
/// and dispatches cost processing time; execution itself runs off-handler.
pub struct Controller {
    coordinator: AgentId,
    capacity: f64,
    heartbeat_interval: Tick,
    status_cost: u64,
    dispatch_cost: u64,
    backlog_until: Tick,
    accepted_work: f64,
    jobs: BTreeMap<TaskId, Job>,
    done: BTreeSet<TaskId>,
}

impl Controller {
    pub fn new(
        coordinator: AgentId,
        capacity: f64,
        heartbeat_interval: Tick,
        status_cost: f64,
        dispatch_cost: f64,
    ) -> Self {
        Self {
            coordinator,
            capacity,
            heartbeat_interval,
            status_cost: subticks(status_cost),
            dispatch_cost: subticks(dispatch_cost),
            backlog_until: 0,
            accepted_work: 0.0,
            jobs: BTreeMap::new(),
            done: BTreeSet::new(),
        }
    }

    pub fn queued(&self) -> usize {
        self.jobs.len()
    }

    fn accept(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) {
        ctx.charge(self.dispatch_cost);
        let req = match ServiceRequest::parse(msg) {
            Ok(r) => r,
            Err(e) => return record_malformed(ctx, msg, &e),
        };
        let task = match TaskRequest::decode(&req.body) {
            Ok(t) => t,
            Err(e) => return record_malformed(ctx, msg, &EnvelopeError::Body(e.to_string())),
        };
        let responder = req.responder(ctx.id().clone());
        if self.jobs.contains_key(&task.task) {
            return;
        }
        if self.done.contains(&task.task) {
            // Re-dispatch of finished work: answer again on the new path.
            let body = done_response(task.task, ctx.id());
            let _ = responder.respond(ctx, body);
            return;
        }
        let start = ctx.started_at();
        let exec = (task.work_units / self.capacity).ceil() as Tick;
        let begin = start.max(self.backlog_until);
        let finish = begin + exec.max(1);
        self.backlog_until = finish;
        self.accepted_work += task.work_units;
        ctx.record(
            EventRecord::new(start, EventKind::TaskAssigned, ctx.id().as_str())
                .task(task.task)
                .round(task.round)
                .detail(json!({
                    "coordinator": msg.sender.as_str(),
                    "queue_wait": begin - start,
                    "finish": finish,
                })),
        );
        self.jobs.insert(task.task, Job { responder });
        ctx.set_timer(finish, task.task.0);
    }
}

fn done_response(task: TaskId, controller: &AgentId) -> Vec<u8> {
    TaskResponse {
        task,
        status: TaskStatus::Done,
        controller: Some(controller.clone()),
    }
    .encode()
}

impl AgentBehavior for Controller {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) {
        let me = ctx.id().clone();
        ctx.subscribe(&TopicFilter::from(CoordinatorConfig::task_topic(&me)))
            .expect("valid filter");
        ctx.subscribe(&TopicFilter::from(status_topic(&me)))
            .expect("valid filter");
        ctx.enable_heartbeat(
            CoordinatorConfig::heartbeat_topic(&self.coordinator),
            self.heartbeat_interval,
        );
    }

    fn on_message(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) {
        if msg.topic.as_str().ends_with("/status") {
            ctx.charge(self.status_cost);
        } else {
            self.accept(ctx, msg);
        }
    }

    fn on_timer(&mut self, ctx: &mut AgentContext<'_>, key: u64) {
        let task = TaskId(key);
        let Some(job) = self.jobs.remove(&task) else {
            return;
        };
        ctx.record(EventRecord::new(ctx.now(), EventKind::TaskDone, ctx.id().as_str()).task(task));
        let body = done_response(task, ctx.id());
        let _ = job.responder.respond(ctx, body);
        self.done.insert(task);
    }

    fn heartbeat_payload(&self, now: Tick) -> Vec<u8> {
        LoadReport {
            pending_work: self.backlog_until.saturating_sub(now) as f64 * self.capacity,
            capacity: self.capacity,
            accepted_work: self.accepted_work,
        }
        .encode()
        .to_vec()
    }
}
