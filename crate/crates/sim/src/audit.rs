//! Log audits that re-check run invariants without re-running.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use agentflow::log::{EventKind, EventRecord};
use agentflow::logistics::parse_reply_topic;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    /// Responses reach only the client named in the reply topic.
    Selectivity,
    /// Every recorded winner is the least-loaded rank, least id on ties.
    Argmin,
    /// Every generated task has exactly one final class.
    Conservation,
    /// Every delivery lands inside the configured latency range.
    LatencyBound,
    /// Handler runs of one agent never overlap.
    HandlerAlternation,
}

impl Invariant {
    pub const ALL: [Invariant; 5] = [
        Self::Selectivity,
        Self::Argmin,
        Self::Conservation,
        Self::LatencyBound,
        Self::HandlerAlternation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Selectivity => "selectivity",
            Self::Argmin => "argmin",
            Self::Conservation => "conservation",
            Self::LatencyBound => "latency_bound",
            Self::HandlerAlternation => "handler_alternation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.name() == s)
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: Invariant,
    pub tick: u64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at tick {}: {}",
            self.invariant, self.tick, self.message
        )
    }
}

fn violation(invariant: Invariant, tick: u64, message: String) -> Violation {
    Violation {
        invariant,
        tick,
        message,
    }
}

pub fn audit_selectivity(records: &[EventRecord]) -> Vec<Violation> {
    records
        .iter()
        .filter(|r| r.kind == EventKind::Deliver)
        .filter_map(|r| {
            let (owner, _) = parse_reply_topic(r.topic.as_deref()?)?;
            (owner != r.agent).then(|| {
                violation(
                    Invariant::Selectivity,
                    r.tick,
                    format!(
                        "{} delivered to {}",
                        r.topic.as_deref().unwrap_or_default(),
                        r.agent
                    ),
                )
            })
        })
        .collect()
}

/// Brute-force check of each `Decide` record against its own rank list.
pub fn audit_argmin(records: &[EventRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.kind == EventKind::Decide) {
        let winner = r.detail_str("winner").unwrap_or_default();
        let ranks: Vec<(String, f64)> = r
            .detail
            .get("ranks")
            .and_then(|v| v.as_array())
            .map(|a| {
                a.iter()
                    .filter_map(|p| Some((p.get(0)?.as_str()?.to_string(), p.get(1)?.as_f64()?)))
                    .collect()
            })
            .unwrap_or_default();
        let mut best: Option<&(String, f64)> = None;
        for cand in &ranks {
            best = match best {
                Some(b) if b.1 < cand.1 || (b.1 == cand.1 && b.0 <= cand.0) => Some(b),
                _ => Some(cand),
            };
        }
        match best {
            Some((id, _)) if id == winner => {}
            Some((id, v)) => out.push(violation(
                Invariant::Argmin,
                r.tick,
                format!("task {:?}: winner {winner} but {id} ranked {v}", r.task),
            )),
            None => out.push(violation(
                Invariant::Argmin,
                r.tick,
                format!("task {:?}: winner {winner} with no ranks", r.task),
            )),
        }
    }
    out
}

/// Final classes must cover `0..generated` exactly once and agree with the
/// creation records.
pub fn audit_conservation(records: &[EventRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(end) = records.iter().rev().find(|r| r.kind == EventKind::RunEnd) else {
        out.push(violation(
            Invariant::Conservation,
            0,
            "log has no run end record".into(),
        ));
        return out;
    };
    let generated = end.detail_u64("generated").unwrap_or(0);
    let mut finals: BTreeMap<u64, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.kind == EventKind::TaskFinal) {
        match r.task {
            Some(t) => *finals.entry(t.0).or_default() += 1,
            None => out.push(violation(
                Invariant::Conservation,
                r.tick,
                "final record without task".into(),
            )),
        }
    }
    for (t, n) in &finals {
        if *n != 1 || *t >= generated {
            out.push(violation(
                Invariant::Conservation,
                end.tick,
                format!("task {t} has {n} final records (generated {generated})"),
            ));
        }
    }
    if finals.len() as u64 != generated {
        out.push(violation(
            Invariant::Conservation,
            end.tick,
            format!("{} classified tasks, {generated} generated", finals.len()),
        ));
    }
    let created: BTreeSet<u64> = records
        .iter()
        .filter(|r| r.kind == EventKind::TaskCreated)
        .filter_map(|r| r.task.map(|t| t.0))
        .collect();
    if created.len() as u64 != generated {
        out.push(violation(
            Invariant::Conservation,
            end.tick,
            format!("{} tasks created, {generated} generated", created.len()),
        ));
    }
    out
}

pub fn audit_latency_bound(records: &[EventRecord]) -> Vec<Violation> {
    let Some(end) = records.iter().rev().find(|r| r.kind == EventKind::RunEnd) else {
        return Vec::new();
    };
    let (Some(lo), Some(hi)) = (end.detail_u64("latency_lo"), end.detail_u64("latency_hi")) else {
        return Vec::new();
    };
    records
        .iter()
        .filter(|r| r.kind == EventKind::Deliver)
        .filter_map(|r| {
            let sent = r.detail_u64("sent_at")?;
            let delay = r.tick.checked_sub(sent);
            (!delay.is_some_and(|d| lo <= d && d <= hi)).then(|| {
                violation(
                    Invariant::LatencyBound,
                    r.tick,
                    format!(
                        "delivery to {} sent at {sent} outside [{lo}, {hi}]",
                        r.agent
                    ),
                )
            })
        })
        .collect()
}

pub fn audit_handler_alternation(records: &[EventRecord]) -> Vec<Violation> {
    let mut open: BTreeMap<&str, bool> = BTreeMap::new();
    let mut out = Vec::new();
    for r in records {
        let starting = match r.kind {
            EventKind::HandlerStart => true,
            EventKind::HandlerEnd => false,
            _ => continue,
        };
        let was_open = open.insert(&r.agent, starting).unwrap_or(false);
        if was_open == starting {
            out.push(violation(
                Invariant::HandlerAlternation,
                r.tick,
                format!("{} handler {:?} out of order", r.agent, r.kind),
            ));
        }
    }
    out
}

pub fn audit(records: &[EventRecord], invariant: Invariant) -> Vec<Violation> {
    match invariant {
        Invariant::Selectivity => audit_selectivity(records),
        Invariant::Argmin => audit_argmin(records),
        Invariant::Conservation => audit_conservation(records),
        Invariant::LatencyBound => audit_latency_bound(records),
        Invariant::HandlerAlternation => audit_handler_alternation(records),
    }
}

pub fn audit_all(records: &[EventRecord]) -> Vec<Violation> {
    Invariant::ALL
        .into_iter()
        .flat_map(|i| audit(records, i))
        .collect()
}
