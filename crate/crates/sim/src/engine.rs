//! Builds the swarm, drives the event loop and closes the log.

use std::collections::BTreeMap;

use agentflow::agent::{AgentBehavior, AgentContext, Runtime};
use agentflow::election::{CoordinatorConfig, LoadingCoordinator};
use agentflow::ids::{AgentId, TaskId};
use agentflow::log::{EventKind, EventRecord};
use agentflow::messaging::{Message, TopicName};
use agentflow::Tick;
use rand::RngCore;
use serde_json::json;
use thiserror::Error;

use crate::agents::{Amr, Controller, PlannedTask};
use crate::config::{ConfigError, SimConfig};
use crate::metrics::{classify_tasks, compute_metrics, MetricsReport};
use crate::tasks::{assign_owners, generate_tasks};

pub const SERVICE_TOPIC: &str = "svc/tasks/req";
const BROKER_STREAM: u64 = 5;
/// Settle checks run this often during the drain phase.
const DRAIN_STEP: Tick = 1_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
}

pub fn coordinator_id(i: usize) -> AgentId {
    AgentId::new(format!("coord-{i}")).expect("valid id")
}

pub fn controller_id(i: usize) -> AgentId {
    AgentId::new(format!("ctrl-{i:03}")).expect("valid id")
}

pub fn amr_id(i: usize) -> AgentId {
    AgentId::new(format!("amr-{i:04}")).expect("valid id")
}

/// Root of the AMR holon; passive.
struct Fleet;

impl AgentBehavior for Fleet {
    fn on_message(&mut self, _: &mut AgentContext<'_>, _: &Message) {}
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<EventRecord>,
    pub report: MetricsReport,
}

/// Runs one seeded simulation to completion.
pub fn run(cfg: &SimConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let broker_seed = crate::rng_stream(cfg.seed, BROKER_STREAM).next_u64();
    let mut rt =
        Runtime::new(cfg.network.clone(), broker_seed, cfg.log_level).expect("network validated");
    let service_topic = TopicName::new(SERVICE_TOPIC).expect("valid");

    let coords: Vec<AgentId> = (0..cfg.n_coordinators).map(coordinator_id).collect();
    let ctrls: Vec<AgentId> = (0..cfg.n_controllers).map(controller_id).collect();
    let home_coord = |i: usize| i % cfg.n_coordinators;

    for (ci, c) in coords.iter().enumerate() {
        let cluster = ctrls
            .iter()
            .enumerate()
            .filter(|(i, _)| home_coord(*i) == ci)
            .map(|(_, id)| id.clone())
            .collect();
        let e = &cfg.election;
        let coordinator = LoadingCoordinator::new(CoordinatorConfig {
            service_topic: service_topic.clone(),
            peers: coords.clone(),
            cluster,
            window_ticks: e.window_ticks,
            heartbeat_interval: e.heartbeat_interval_ticks,
            misses_allowed: e.misses_allowed,
            dispatch_policy: cfg.dispatch_policy,
            max_requeues: e.max_requeues,
            requeue_delay_ticks: e.requeue_delay_ticks,
        });
        rt.spawn(c.clone(), Box::new(coordinator), None)
            .expect("fresh id");
    }
    let w = &cfg.workload;
    for (i, c) in ctrls.iter().enumerate() {
        let parent = &coords[home_coord(i)];
        let ctrl = Controller::new(
            parent.clone(),
            w.controller_capacity,
            cfg.election.heartbeat_interval_ticks,
            w.status_cost_ticks,
            w.dispatch_cost_ticks,
        );
        rt.spawn(c.clone(), Box::new(ctrl), Some(parent))
            .expect("fresh id");
    }

    let arrivals = generate_tasks(
        cfg.task_rate_per_min,
        cfg.warmup_ticks.min(cfg.duration_ticks),
        cfg.duration_ticks,
        cfg.ticks_per_second,
        cfg.seed,
    );
    let owners = assign_owners(arrivals.len(), cfg.n_amrs, cfg.seed);
    let mut plans: Vec<Vec<PlannedTask>> = vec![Vec::new(); cfg.n_amrs];
    for (i, (&at, &owner)) in arrivals.iter().zip(&owners).enumerate() {
        plans[owner].push(PlannedTask {
            id: TaskId(i as u64),
            at,
            work_units: w.work_units,
        });
    }
    let fleet = AgentId::new("fleet").expect("valid");
    rt.spawn(fleet.clone(), Box::new(Fleet), None)
        .expect("fresh id");
    let amrs: Vec<AgentId> = (0..cfg.n_amrs).map(amr_id).collect();
    for (i, (id, plan)) in amrs.iter().zip(plans).enumerate() {
        let amr = Amr::new(
            ctrls[i % cfg.n_controllers].clone(),
            service_topic.clone(),
            cfg.amr_policy,
            w.status_period_ticks,
            (i as u64 * 7919) % w.status_period_ticks,
            plan,
        );
        rt.spawn(id.clone(), Box::new(amr), Some(&fleet))
            .expect("fresh id");
    }

    let failures = cfg
        .fault_plan
        .schedule(cfg.n_controllers, cfg.duration_ticks, cfg.seed);
    for f in &failures {
        rt.schedule_failure(&ctrls[f.controller], f.at);
    }

    rt.run_until(cfg.duration_ticks);
    let limit = cfg.duration_ticks + cfg.drain_ticks;
    let settled = |rt: &Runtime| {
        amrs.iter()
            .all(|a| rt.behavior::<Amr>(a).is_some_and(|b| b.in_flight() == 0))
    };
    while rt.now() < limit && !settled(&rt) {
        rt.run_until((rt.now() + DRAIN_STEP).min(limit));
    }

    let end = rt.now();
    let (fw_start, fw_end) = cfg.fault_plan.window_ticks(cfg.duration_ticks);
    let run_end = EventRecord::new(end, EventKind::RunEnd, "engine").detail(json!({
        "seed": cfg.seed,
        "generated": arrivals.len(),
        "published": rt.broker().stats().published,
        "live_agent_ticks": rt.live_agent_ticks(),
        "discarded": rt.stats().discarded_deliveries,
        "latency_lo": cfg.network.latency_ticks.0,
        "latency_hi": cfg.network.latency_ticks.1,
        "duration_ticks": cfg.duration_ticks,
        "ticks_per_second": cfg.ticks_per_second,
        "fault_window_start": fw_start,
        "fault_window_end": fw_end,
        "throughput_span": (cfg.duration_ticks as f64 * 0.15).round() as Tick,
        "failures_planned": failures.len(),
        "settled": settled(&rt),
    }));

    let mut records = rt.into_log().into_records();
    let finals: BTreeMap<TaskId, &'static str> = classify_tasks(&records, arrivals.len() as u64);
    for (task, outcome) in finals {
        records.push(
            EventRecord::new(end, EventKind::TaskFinal, "engine")
                .task(task)
                .detail(json!({ "outcome": outcome })),
        );
    }
    records.push(run_end);
    let report = compute_metrics(&records);
    Ok(RunOutput { records, report })
}
