//! The `run`, `sweep` and `replay` commands.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use agentflow::log::{read_jsonl, write_jsonl};
use agentflow_sim::audit::{audit, audit_all, Invariant};
use agentflow_sim::{run, MetricsReport, RunOutput, SimConfig, SimError};
use serde_json::Value;

use crate::output::write_atomic;
use crate::scenario::{parse_override, Scenario};
use crate::CliError;

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || "scenario".to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn simulate(cfg: &SimConfig) -> Result<RunOutput, CliError> {
    let out = run(cfg).map_err(|e| match e {
        SimError::Config(c) => CliError::Input(format!("config: {c}")),
    })?;
    let violations = audit_all(&out.records);
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Invariant(violations))
    }
}

fn write_metrics(
    dir: &Path,
    name: &str,
    report: &MetricsReport,
) -> std::io::Result<(PathBuf, PathBuf)> {
    let json = dir.join(format!("{name}.metrics.json"));
    let csv = dir.join(format!("{name}.metrics.csv"));
    write_atomic(&json, |w| writeln!(w, "{}", report.to_json()))?;
    write_atomic(&csv, |w| report.write_csv(w).map_err(std::io::Error::other))?;
    Ok((json, csv))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: MetricsReport,
    pub files: Vec<PathBuf>,
}

/// Runs one scenario and writes its metrics (and optionally its event log).
pub fn cmd_run(
    path: &Path,
    overrides: &[String],
    write_log: bool,
    out_dir: &Path,
) -> Result<RunSummary, CliError> {
    let scenario = Scenario::load(path)?;
    let overrides = overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = scenario.config_with(&overrides)?;
    let out = simulate(&cfg)?;
    let name = stem(path);
    let (json, csv) = write_metrics(out_dir, &name, &out.report)?;
    let mut files = vec![json, csv];
    if write_log {
        let log = out_dir.join(format!("{name}.events.jsonl"));
        write_atomic(&log, |w| write_jsonl(&out.records, w))?;
        files.push(log);
    }
    Ok(RunSummary {
        report: out.report,
        files,
    })
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Metric values in CSV column order, formatted as the one-row CSV would.
fn metric_fields(report: &MetricsReport) -> Vec<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.serialize(report).expect("flat struct");
    let bytes = w.into_inner().expect("in-memory writer");
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(&bytes[..]);
    let rec = r.records().next().expect("one row").expect("valid csv");
    rec.iter().map(str::to_string).collect()
}

fn numeric(field: &str) -> Option<f64> {
    match field {
        "true" => Some(1.0),
        "false" => Some(0.0),
        s => s.parse().ok(),
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: Value,
    pub seed: u64,
    pub result: Result<MetricsReport, String>,
    pub status: &'static str,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub parameter: String,
    pub points: Vec<SweepPoint>,
    pub long_csv: PathBuf,
    pub aggregate_csv: PathBuf,
}

impl SweepSummary {
    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| p.result.is_err()).count()
    }
}

pub const LONG_PREFIX: [&str; 5] = ["parameter", "value", "seed", "status", "error"];
pub const AGGREGATE_PREFIX: [&str; 4] = ["parameter", "value", "runs_ok", "runs_failed"];

pub fn long_header() -> Vec<String> {
    LONG_PREFIX
        .iter()
        .map(|s| s.to_string())
        .chain(
            MetricsReport::csv_header()
                .into_iter()
                .filter(|h| h != "seed"),
        )
        .collect()
}

pub fn aggregate_header() -> Vec<String> {
    AGGREGATE_PREFIX
        .iter()
        .map(|s| s.to_string())
        .chain(
            MetricsReport::csv_header()
                .into_iter()
                .filter(|h| h != "seed")
                .map(|h| format!("mean_{h}")),
        )
        .collect()
}

/// Runs every (value, seed) point of the scenario's sweep block. Failed
/// points are recorded and the sweep continues.
pub fn cmd_sweep(path: &Path, out_dir: &Path) -> Result<SweepSummary, CliError> {
    let scenario = Scenario::load(path)?;
    let sweep = scenario
        .sweep
        .clone()
        .ok_or_else(|| CliError::Input("scenario has no sweep block".into()))?;
    if sweep.values.is_empty() {
        return Err(CliError::Input("sweep.values is empty".into()));
    }
    let base_seed = scenario.config_with(&[])?.seed;
    let seeds = sweep.seeds.clone().unwrap_or_else(|| vec![base_seed]);
    if seeds.is_empty() {
        return Err(CliError::Input("sweep.seeds is empty".into()));
    }
    let name = stem(path);
    let point_dir = out_dir.join(format!("{name}.points"));

    let mut points = Vec::new();
    for value in &sweep.values {
        for &seed in &seeds {
            let overrides = [
                (sweep.parameter.clone(), value.clone()),
                ("seed".to_string(), Value::from(seed)),
            ];
            let outcome = scenario
                .config_with(&overrides)
                .and_then(|cfg| simulate(&cfg));
            let (result, status) = match outcome {
                Ok(out) => {
                    let point = format!("{}={}.seed-{seed}", sweep.parameter, value_label(value));
                    write_metrics(&point_dir, &point, &out.report)?;
                    (Ok(out.report), "ok")
                }
                Err(e @ CliError::Invariant(_)) => (Err(e.to_string()), "invariant_violation"),
                Err(e) => (Err(e.to_string()), "config_error"),
            };
            points.push(SweepPoint {
                value: value.clone(),
                seed,
                result,
                status,
            });
        }
    }

    let long_csv = out_dir.join(format!("{name}.sweep.csv"));
    write_atomic(&long_csv, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(long_header())?;
        let blanks = MetricsReport::csv_header().len() - 1;
        for p in &points {
            let mut row = vec![
                sweep.parameter.clone(),
                value_label(&p.value),
                p.seed.to_string(),
                p.status.to_string(),
            ];
            match &p.result {
                Ok(r) => {
                    row.push(String::new());
                    row.extend(metric_fields(r).into_iter().skip(1));
                }
                Err(e) => {
                    row.push(e.clone());
                    row.extend(std::iter::repeat_n(String::new(), blanks));
                }
            }
            csv.write_record(row)?;
        }
        csv.flush()
    })?;

    let aggregate_csv = out_dir.join(format!("{name}.aggregate.csv"));
    write_atomic(&aggregate_csv, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(aggregate_header())?;
        for value in &sweep.values {
            let at: Vec<&SweepPoint> = points.iter().filter(|p| &p.value == value).collect();
            let ok: Vec<Vec<String>> = at
                .iter()
                .filter_map(|p| p.result.as_ref().ok())
                .map(|r| metric_fields(r).into_iter().skip(1).collect())
                .collect();
            let mut row = vec![
                sweep.parameter.clone(),
                value_label(value),
                ok.len().to_string(),
                (at.len() - ok.len()).to_string(),
            ];
            let columns = MetricsReport::csv_header().len() - 1;
            for c in 0..columns {
                let xs: Vec<f64> = ok.iter().filter_map(|r| numeric(&r[c])).collect();
                row.push(if xs.is_empty() {
                    String::new()
                } else {
                    (xs.iter().sum::<f64>() / xs.len() as f64).to_string()
                });
            }
            csv.write_record(row)?;
        }
        csv.flush()
    })?;

    Ok(SweepSummary {
        parameter: sweep.parameter,
        points,
        long_csv,
        aggregate_csv,
    })
}

#[derive(Debug, Clone)]
pub struct ReplaySummary {
    pub records: usize,
    pub checked: Vec<(Invariant, usize)>,
}

/// Re-audits a saved event log. `assertions` names invariants to check;
/// empty means all of them.
pub fn cmd_replay(log_path: &Path, assertions: &[String]) -> Result<ReplaySummary, CliError> {
    let invariants = if assertions.is_empty() {
        Invariant::ALL.to_vec()
    } else {
        assertions
            .iter()
            .map(|a| {
                Invariant::parse(a).ok_or_else(|| {
                    let known: Vec<&str> = Invariant::ALL.iter().map(|i| i.name()).collect();
                    CliError::Input(format!(
                        "unknown assertion {a:?}; known: {}",
                        known.join(", ")
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let file = std::fs::File::open(log_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", log_path.display())))?;
    let records = read_jsonl(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("corrupt log: {e}")))?;
    let mut checked = Vec::new();
    let mut violations = Vec::new();
    for inv in invariants {
        let v = audit(&records, inv);
        checked.push((inv, v.len()));
        violations.extend(v);
    }
    if violations.is_empty() {
        Ok(ReplaySummary {
            records: records.len(),
            checked,
        })
    } else {
        Err(CliError::Invariant(violations))
    }
}
