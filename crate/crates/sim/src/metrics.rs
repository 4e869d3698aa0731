//! Metrics derived from a finished event log.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use agentflow::ids::TaskId;
use agentflow::log::{EventKind, EventRecord};
use agentflow::Tick;
use serde::{Deserialize, Serialize};

/// Round reasons that count as a re-election after a failure.
pub const REELECTION_REASONS: [&str; 2] = ["reelection", "winner_suspected"];

pub const OUTCOME_COMPLETED: &str = "completed";
pub const OUTCOME_TIMED_OUT: &str = "timed_out";
pub const OUTCOME_REJECTED: &str = "rejected";
pub const OUTCOME_ORPHANED: &str = "orphaned_unrecovered";
pub const OUTCOME_PENDING: &str = "pending";

/// Flat per-run summary. Times are in milliseconds unless the name says
/// otherwise; `*_undefined` flags mark metrics with no observations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub end_tick: Tick,
    pub tasks_generated: u64,
    pub tasks_completed: u64,
    pub tasks_timed_out: u64,
    pub tasks_rejected: u64,
    pub tasks_orphaned_unrecovered: u64,
    pub tasks_pending: u64,
    pub success_rate_pct: f64,
    pub success_rate_vacuous: bool,
    pub latency_mean_ms: f64,
    pub latency_p95_ms: f64,
    pub convergence_mean_ms: f64,
    pub convergence_rounds: u64,
    pub convergence_undefined: bool,
    pub messages_published: u64,
    pub overhead_msgs_per_agent_sec: f64,
    pub failures: u64,
    pub failures_unrecovered: u64,
    pub mttr_s: f64,
    pub mttr_undefined: bool,
    pub throughput_pre_per_s: f64,
    pub throughput_post_per_s: f64,
    pub throughput_deviation_pct: f64,
    pub throughput_undefined: bool,
    pub orphaned_tasks: u64,
    pub reassigned_tasks: u64,
    pub reassignment_success_pct: f64,
    pub discarded_deliveries: u64,
    pub late_ranks: u64,
    pub election_failures: u64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("flat struct")
    }

    /// Header plus one data row.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(self)?;
        w.flush()?;
        Ok(())
    }

    pub fn csv_header() -> Vec<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(Self::default()).expect("flat struct");
        let bytes = w.into_inner().expect("in-memory writer");
        let text = String::from_utf8(bytes).expect("utf-8");
        text.lines()
            .next()
            .unwrap_or_default()
            .split(',')
            .map(str::to_string)
            .collect()
    }
}

fn ticks_to_ms(ticks: f64, tps: u64) -> f64 {
    ticks * 1000.0 / tps as f64
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Nearest-rank percentile.
pub fn percentile(xs: &[f64], p: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// `|pre - post| / pre * 100`; undefined when `pre` is zero.
pub fn throughput_deviation(pre: f64, post: f64) -> Option<f64> {
    (pre > 0.0).then(|| (pre - post).abs() / pre * 100.0)
}

/// Messages per live-agent-second; zero when nothing was alive.
pub fn overhead(published: u64, live_agent_seconds: f64) -> f64 {
    if live_agent_seconds > 0.0 {
        published as f64 / live_agent_seconds
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mttr {
    /// Mean seconds over counted failures; `None` when none counted.
    pub seconds: Option<f64>,
    pub counted: usize,
    pub unrecovered: usize,
}

/// Per failed controller: ticks from the failure to the first completion of
/// any task orphaned from it. Failures that orphaned nothing are skipped;
/// failures whose orphans never complete contribute `end_tick - fail`.
pub fn measure_mttr(records: &[EventRecord], ticks_per_second: u64, end_tick: Tick) -> Mttr {
    let mut done: BTreeMap<TaskId, Vec<Tick>> = BTreeMap::new();
    let mut orphaned: BTreeMap<&str, Vec<(TaskId, Tick)>> = BTreeMap::new();
    for r in records {
        match (r.kind, r.task) {
            (EventKind::TaskDone, Some(t)) => done.entry(t).or_default().push(r.tick),
            (EventKind::TaskOrphaned, Some(t)) => {
                if let Some(c) = r.detail_str("controller") {
                    orphaned.entry(c).or_default().push((t, r.tick));
                }
            }
            _ => {}
        }
    }
    let mut times = Vec::new();
    let mut unrecovered = 0;
    for r in records.iter().filter(|r| r.kind == EventKind::Fail) {
        let Some(orphans) = orphaned.get(r.agent.as_str()) else {
            continue;
        };
        let recovered = orphans
            .iter()
            .filter_map(|(t, at)| done.get(t)?.iter().copied().find(|d| d >= at))
            .min();
        let ticks = match recovered {
            Some(d) => d.saturating_sub(r.tick),
            None => {
                unrecovered += 1;
                end_tick.saturating_sub(r.tick)
            }
        };
        times.push(ticks as f64 / ticks_per_second as f64);
    }
    Mttr {
        seconds: mean(&times),
        counted: times.len(),
        unrecovered,
    }
}

/// Re-election rounds as `(opened_at, decided_at)`, taken from the
/// coordinator owning the winner.
pub fn reelection_rounds(records: &[EventRecord]) -> Vec<(Tick, Tick)> {
    records
        .iter()
        .filter(|r| r.kind == EventKind::Decide)
        .filter(|r| r.detail.get("owner").and_then(|v| v.as_bool()) == Some(true))
        .filter(|r| {
            r.detail_str("reason")
                .is_some_and(|s| REELECTION_REASONS.contains(&s))
        })
        .filter_map(|r| Some((r.detail_u64("opened_at")?, r.tick)))
        .collect()
}

/// Mean decide-minus-open ticks over re-election rounds.
pub fn measure_convergence(records: &[EventRecord]) -> Option<f64> {
    let spans: Vec<f64> = reelection_rounds(records)
        .iter()
        .map(|(o, d)| d.saturating_sub(*o) as f64)
        .collect();
    mean(&spans)
}

/// Completions per second in `[from, to)`.
pub fn throughput(records: &[EventRecord], from: Tick, to: Tick, ticks_per_second: u64) -> f64 {
    if to <= from {
        return 0.0;
    }
    let n = records
        .iter()
        .filter(|r| r.kind == EventKind::TaskCompleted && r.tick >= from && r.tick < to)
        .count();
    n as f64 / ((to - from) as f64 / ticks_per_second as f64)
}

#[derive(Debug, Default)]
struct TaskTrace {
    created: Option<Tick>,
    assigned: Vec<Tick>,
    last_orphaned: Option<Tick>,
    completed: bool,
    timed_out: bool,
    rejected: bool,
}

fn traces(records: &[EventRecord]) -> BTreeMap<TaskId, TaskTrace> {
    let mut out: BTreeMap<TaskId, TaskTrace> = BTreeMap::new();
    for r in records {
        let Some(t) = r.task else { continue };
        let tr = || TaskTrace::default();
        match r.kind {
            EventKind::TaskCreated => out.entry(t).or_insert_with(tr).created = Some(r.tick),
            EventKind::TaskAssigned => out.entry(t).or_insert_with(tr).assigned.push(r.tick),
            EventKind::TaskOrphaned => out.entry(t).or_insert_with(tr).last_orphaned = Some(r.tick),
            EventKind::TaskCompleted => out.entry(t).or_insert_with(tr).completed = true,
            EventKind::TaskTimedOut => out.entry(t).or_insert_with(tr).timed_out = true,
            EventKind::NoService if r.detail_str("role") == Some("client") => {
                out.entry(t).or_insert_with(tr).rejected = true
            }
            _ => {}
        }
    }
    out
}

fn reassigned(tr: &TaskTrace) -> bool {
    tr.last_orphaned
        .is_some_and(|o| tr.assigned.iter().any(|&a| a >= o))
}

/// Final class of every generated task id `0..generated`.
pub fn classify_tasks(records: &[EventRecord], generated: u64) -> BTreeMap<TaskId, &'static str> {
    let tr = traces(records);
    (0..generated)
        .map(TaskId)
        .map(|id| {
            let class = match tr.get(&id) {
                Some(t) if t.completed => OUTCOME_COMPLETED,
                Some(t) if t.rejected => OUTCOME_REJECTED,
                Some(t) if t.timed_out => OUTCOME_TIMED_OUT,
                Some(t) if t.last_orphaned.is_some() && !reassigned(t) => OUTCOME_ORPHANED,
                _ => OUTCOME_PENDING,
            };
            (id, class)
        })
        .collect()
}

fn count(records: &[EventRecord], kind: EventKind) -> u64 {
    records.iter().filter(|r| r.kind == kind).count() as u64
}

/// Builds the report from a closed log (one ending in a `RunEnd` record).
pub fn compute_metrics(records: &[EventRecord]) -> MetricsReport {
    let end = records.iter().rev().find(|r| r.kind == EventKind::RunEnd);
    let get = |k: &str| end.and_then(|r| r.detail_u64(k)).unwrap_or(0);
    let tps = get("ticks_per_second").max(1);
    let end_tick = end.map_or(0, |r| r.tick);
    let generated = get("generated");

    let mut rep = MetricsReport {
        seed: get("seed"),
        end_tick,
        tasks_generated: generated,
        messages_published: get("published"),
        discarded_deliveries: get("discarded"),
        ..MetricsReport::default()
    };

    let finals: Vec<&str> = records
        .iter()
        .filter(|r| r.kind == EventKind::TaskFinal)
        .filter_map(|r| r.detail_str("outcome"))
        .collect();
    let n = |class: &str| finals.iter().filter(|c| **c == class).count() as u64;
    rep.tasks_completed = n(OUTCOME_COMPLETED);
    rep.tasks_timed_out = n(OUTCOME_TIMED_OUT);
    rep.tasks_rejected = n(OUTCOME_REJECTED);
    rep.tasks_orphaned_unrecovered = n(OUTCOME_ORPHANED);
    rep.tasks_pending = n(OUTCOME_PENDING);
    if generated == 0 {
        rep.success_rate_pct = 100.0;
        rep.success_rate_vacuous = true;
    } else {
        rep.success_rate_pct = rep.tasks_completed as f64 / generated as f64 * 100.0;
    }

    let tr = traces(records);
    let latencies: Vec<f64> = tr
        .values()
        .filter_map(|t| {
            Some(ticks_to_ms(
                t.assigned.first()?.saturating_sub(t.created?) as f64,
                tps,
            ))
        })
        .collect();
    rep.latency_mean_ms = mean(&latencies).unwrap_or(0.0);
    rep.latency_p95_ms = percentile(&latencies, 95.0).unwrap_or(0.0);

    let rounds = reelection_rounds(records);
    rep.convergence_rounds = rounds.len() as u64;
    match measure_convergence(records) {
        Some(c) => rep.convergence_mean_ms = ticks_to_ms(c, tps),
        None => rep.convergence_undefined = true,
    }

    let live_seconds = get("live_agent_ticks") as f64 / tps as f64;
    rep.overhead_msgs_per_agent_sec = overhead(rep.messages_published, live_seconds);

    rep.failures = count(records, EventKind::Fail);
    let mttr = measure_mttr(records, tps, end_tick);
    rep.failures_unrecovered = mttr.unrecovered as u64;
    match mttr.seconds {
        Some(s) => rep.mttr_s = s,
        None => rep.mttr_undefined = true,
    }

    let (ws, we, span) = (
        get("fault_window_start"),
        get("fault_window_end"),
        get("throughput_span"),
    );
    rep.throughput_pre_per_s = throughput(records, ws.saturating_sub(span), ws, tps);
    rep.throughput_post_per_s = throughput(records, we, we + span, tps);
    match throughput_deviation(rep.throughput_pre_per_s, rep.throughput_post_per_s) {
        Some(d) => rep.throughput_deviation_pct = d,
        None => rep.throughput_undefined = true,
    }

    let orphans: Vec<&TaskTrace> = tr.values().filter(|t| t.last_orphaned.is_some()).collect();
    rep.orphaned_tasks = orphans.len() as u64;
    rep.reassigned_tasks = orphans.iter().filter(|t| reassigned(t)).count() as u64;
    rep.reassignment_success_pct = if orphans.is_empty() {
        100.0
    } else {
        rep.reassigned_tasks as f64 / rep.orphaned_tasks as f64 * 100.0
    };

    rep.late_ranks = count(records, EventKind::LateRank);
    rep.election_failures = records
        .iter()
        .filter(|r| r.kind == EventKind::ElectionFailed)
        .map(|r| (r.task, r.round))
        .collect::<BTreeSet<_>>()
        .len() as u64;
    rep
}
