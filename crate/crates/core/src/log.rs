//! Engine event log.
//!
//! Serialized as line-delimited JSON, one object per record with the stable
//! fields `tick`, `kind`, `agent`, optional `topic`/`task`/`round`, and a
//! free-form `detail` object. Audits and metrics are computed from this log
//! alone, so anything they need must be recorded here.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ids::TaskId;
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    // transport (full level only)
    Publish,
    Deliver,
    Drop,
    Discard,
    HandlerStart,
    HandlerEnd,
    // lifecycle
    Spawn,
    Terminate,
    Fail,
    Reparent,
    // logistics
    RequestSent,
    RequestRetry,
    RequestSucceeded,
    RequestTimedOut,
    DuplicateResponse,
    MalformedRequest,
    Served,
    // election
    RoundOpen,
    Rank,
    LateRank,
    Decide,
    ElectionFailed,
    Suspect,
    NoService,
    // task lifecycle
    TaskCreated,
    TaskDispatched,
    TaskAssigned,
    TaskDone,
    TaskCompleted,
    TaskTimedOut,
    TaskOrphaned,
    TaskFinal,
    RunEnd,
}

impl EventKind {
    /// Per-message records that only the full level keeps.
    pub fn is_transport(self) -> bool {
        matches!(
            self,
            Self::Publish
                | Self::Deliver
                | Self::Drop
                | Self::Discard
                | Self::HandlerStart
                | Self::HandlerEnd
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: Tick,
    pub kind: EventKind,
    pub agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default)]
    pub detail: Value,
}

impl EventRecord {
    pub fn new(tick: Tick, kind: EventKind, agent: impl Into<String>) -> Self {
        Self {
            tick,
            kind,
            agent: agent.into(),
            topic: None,
            task: None,
            round: None,
            detail: Value::Null,
        }
    }

    pub fn topic(mut self, topic: impl Into<String>) -> Self {
        self.topic = Some(topic.into());
        self
    }

    pub fn task(mut self, task: TaskId) -> Self {
        self.task = Some(task);
        self
    }

    pub fn round(mut self, round: u32) -> Self {
        self.round = Some(round);
        self
    }

    pub fn detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.detail.get(key).and_then(Value::as_str)
    }

    pub fn detail_u64(&self, key: &str) -> Option<u64> {
        self.detail.get(key).and_then(Value::as_u64)
    }

    pub fn detail_f64(&self, key: &str) -> Option<f64> {
        self.detail.get(key).and_then(Value::as_f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLevel {
    /// Lifecycle, logistics, election and task records.
    #[default]
    Summary,
    /// Everything, including every publish, delivery and handler run.
    Full,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    level: LogLevel,
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new(level: LogLevel) -> Self {
        Self {
            level,
            records: Vec::new(),
        }
    }

    pub fn level(&self) -> LogLevel {
        self.level
    }

    pub fn wants(&self, kind: EventKind) -> bool {
        self.level == LogLevel::Full || !kind.is_transport()
    }

    pub fn push(&mut self, record: EventRecord) {
        if self.wants(record.kind) {
            self.records.push(record);
        }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EventRecord> {
        self.records
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> io::Result<()> {
        write_jsonl(&self.records, out)
    }
}

pub fn write_jsonl<W: Write>(records: &[EventRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<EventRecord>, LogError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| LogError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn summary_level_filters_transport_records() {
        let mut log = EventLog::new(LogLevel::Summary);
        log.push(EventRecord::new(1, EventKind::Publish, "a"));
        log.push(EventRecord::new(1, EventKind::Spawn, "a"));
        assert_eq!(log.records().len(), 1);
    }

    #[test]
    fn jsonl_field_names_are_stable() {
        let rec = EventRecord::new(5, EventKind::Decide, "coord-1")
            .topic("election/3/rank")
            .task(TaskId(3))
            .round(1)
            .detail(json!({"winner": "ctrl-02"}));
        let mut buf = Vec::new();
        write_jsonl(std::slice::from_ref(&rec), &mut buf).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            line,
            "{\"tick\":5,\"kind\":\"decide\",\"agent\":\"coord-1\",\"topic\":\"election/3/rank\",\"task\":3,\"round\":1,\"detail\":{\"winner\":\"ctrl-02\"}}\n"
        );
        assert_eq!(read_jsonl(&buf[..]).unwrap(), vec![rec]);
    }

    #[test]
    fn corrupt_line_is_reported() {
        let err = read_jsonl(&b"{\"tick\":1}\nnot json\n"[..]).unwrap_err();
        assert!(matches!(err, LogError::Parse { line: 1, .. }));
    }
}
