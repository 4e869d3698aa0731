use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agentflow::log::{read_jsonl, write_jsonl, EventKind};
use agentflow_cli::commands::{aggregate_header, long_header};
use agentflow_sim::MetricsReport;
use serde_json::{json, Value};
use tempfile::TempDir;

const SMALL: &str = r#"{
  "n_amrs": 20,
  "n_controllers": 4,
  "n_coordinators": 2,
  "task_rate_per_min": 600,
  "duration_ticks": 5000,
  "drain_ticks": 20000,
  "fault_plan": { "controller_failure_fraction": 0.0 }
}"#;

fn agentflow(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentflow"))
        .args(args)
        .env("AGENTFLOW_OUT", out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn with_sweep(sweep: Value) -> String {
    let mut v: Value = serde_json::from_str(SMALL).unwrap();
    v["sweep"] = sweep;
    v.to_string()
}

fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(p).unwrap().trim_end().to_string()
}

#[test]
fn run_fault_free_writes_full_success_metrics() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let s = scenario(&dir, "base.json", SMALL);
    let o = agentflow(&out, &["run", s.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("base.metrics.json")).unwrap())
            .unwrap();
    assert_eq!(m["success_rate_pct"], json!(100.0));
    let csv = std::fs::read_to_string(out.join("base.metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn run_twice_gives_byte_identical_metrics() {
    let dir = TempDir::new().unwrap();
    let s = scenario(&dir, "base.json", SMALL);
    let read = |sub: &str| {
        let out = dir.path().join(sub);
        assert_eq!(
            code(&agentflow(&out, &["run", s.to_str().unwrap(), "seed=9"])),
            0
        );
        (
            std::fs::read(out.join("base.metrics.json")).unwrap(),
            std::fs::read(out.join("base.metrics.csv")).unwrap(),
        )
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn config_errors_exit_2_without_output() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let bad = scenario(&dir, "bad.json", r#"{"n_amrs": 0}"#);
    let unknown = scenario(&dir, "unknown.json", r#"{"n_amrz": 10}"#);
    let syntax = scenario(&dir, "syntax.json", "{ nope");
    let good = scenario(&dir, "good.json", SMALL);
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", bad.to_str().unwrap()],
        vec!["run", unknown.to_str().unwrap()],
        vec!["run", syntax.to_str().unwrap()],
        vec!["run", "/definitely/missing.json"],
        vec!["run", good.to_str().unwrap(), "n_amrs"],
        vec!["run", good.to_str().unwrap(), "workload.bogus=1"],
        vec!["run", good.to_str().unwrap(), "n_amrs=-3"],
        vec![],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = agentflow(&out, &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(!out.exists(), "{args:?} wrote output");
    }
}

#[test]
fn sweep_writes_long_and_aggregate_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let s = scenario(
        &dir,
        "sizes.json",
        &with_sweep(json!({ "parameter": "n_amrs", "values": [10, 20, 30], "seeds": [1, 2] })),
    );
    let o = agentflow(&out, &["sweep", s.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut long = csv::Reader::from_path(out.join("sizes.sweep.csv")).unwrap();
    assert_eq!(
        long.headers().unwrap().iter().collect::<Vec<_>>(),
        long_header()
    );
    let rows: Vec<csv::StringRecord> = long.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| &r[3] == "ok"));
    let mut agg = csv::Reader::from_path(out.join("sizes.aggregate.csv")).unwrap();
    assert_eq!(
        agg.headers().unwrap().iter().collect::<Vec<_>>(),
        aggregate_header()
    );
    let agg_rows: Vec<csv::StringRecord> = agg.records().map(Result::unwrap).collect();
    let values: Vec<&str> = agg_rows.iter().map(|r| &r[1]).collect();
    assert_eq!(values, ["10", "20", "30"]);
    assert!(agg_rows.iter().all(|r| &r[2] == "2" && &r[3] == "0"));
    assert!(out
        .join("sizes.points/n_amrs=20.seed-2.metrics.json")
        .exists());
}

#[test]
fn sweep_with_failing_point_continues_and_exits_4() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let s = scenario(
        &dir,
        "partial.json",
        &with_sweep(json!({ "parameter": "n_amrs", "values": [10, 0], "seeds": [1] })),
    );
    let o = agentflow(&out, &["sweep", s.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let mut long = csv::Reader::from_path(out.join("partial.sweep.csv")).unwrap();
    let statuses: Vec<String> = long.records().map(|r| r.unwrap()[3].to_string()).collect();
    assert_eq!(statuses, ["ok", "config_error"]);
}

#[test]
fn sweep_input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let empty = scenario(
        &dir,
        "empty.json",
        &with_sweep(json!({ "parameter": "n_amrs", "values": [] })),
    );
    let no_seeds = scenario(
        &dir,
        "noseeds.json",
        &with_sweep(json!({ "parameter": "n_amrs", "values": [10], "seeds": [] })),
    );
    let none = scenario(&dir, "none.json", SMALL);
    for s in [empty, no_seeds, none] {
        let o = agentflow(&out, &["sweep", s.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{}: {}", s.display(), stderr(&o));
    }
}

fn logged_run(dir: &TempDir) -> PathBuf {
    let out = dir.path().join("out");
    let s = scenario(dir, "logged.json", SMALL);
    let o = agentflow(
        &out,
        &["run", s.to_str().unwrap(), "log_level=full", "--log"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("logged.events.jsonl")
}

fn rewrite(src: &Path, dst: &Path, edit: impl FnOnce(&mut Vec<agentflow::log::EventRecord>)) {
    let mut recs = read_jsonl(std::io::BufReader::new(std::fs::File::open(src).unwrap())).unwrap();
    edit(&mut recs);
    write_jsonl(&recs, std::fs::File::create(dst).unwrap()).unwrap();
}

#[test]
fn replay_passes_clean_log_and_catches_planted_violations() {
    let dir = TempDir::new().unwrap();
    let log = logged_run(&dir);
    let out = dir.path().join("unused");
    let o = agentflow(&out, &["replay", log.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("selectivity: pass"));

    let cross = dir.path().join("cross.jsonl");
    rewrite(&log, &cross, |recs| {
        let r = recs
            .iter_mut()
            .find(|r| {
                r.kind == EventKind::Deliver
                    && r.topic
                        .as_deref()
                        .is_some_and(|t| t.starts_with("reply/amr-"))
            })
            .expect("a client response");
        r.agent = "amr-9999".to_string();
    });
    let o = agentflow(&out, &["replay", cross.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("selectivity"), "{}", stderr(&o));

    let skewed = dir.path().join("argmin.jsonl");
    rewrite(&log, &skewed, |recs| {
        let r = recs
            .iter_mut()
            .find(|r| {
                r.kind == EventKind::Decide
                    && r.detail["ranks"].as_array().is_some_and(|a| {
                        a.len() >= 2 && a.iter().any(|p| p[1].as_f64() != a[0][1].as_f64())
                    })
            })
            .expect("a contested round");
        let loser = r.detail["ranks"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p[0].as_str().unwrap().to_string())
            .find(|c| Some(c.as_str()) != r.detail["winner"].as_str())
            .unwrap();
        r.detail["winner"] = json!(loser);
    });
    let o = agentflow(&out, &["replay", skewed.to_str().unwrap(), "argmin"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("argmin"), "{}", stderr(&o));
    // The planted winner does not affect unrelated audits.
    let o = agentflow(
        &out,
        &[
            "replay",
            skewed.to_str().unwrap(),
            "selectivity",
            "conservation",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn replay_input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("unused");
    let corrupt = scenario(&dir, "corrupt.jsonl", "{\"tick\": 1}\nnot json\n");
    assert_eq!(
        code(&agentflow(&out, &["replay", corrupt.to_str().unwrap()])),
        2
    );
    assert_eq!(
        code(&agentflow(&out, &["replay", "/definitely/missing.jsonl"])),
        2
    );
    let empty = scenario(&dir, "empty.jsonl", "");
    assert_eq!(
        code(&agentflow(
            &out,
            &["replay", empty.to_str().unwrap(), "no_such_check"]
        )),
        2
    );
}

#[test]
fn metrics_headers_match_golden_files() {
    assert_eq!(
        MetricsReport::csv_header().join(","),
        golden("metrics_header.csv")
    );
    let keys: Vec<String> = serde_json::to_value(MetricsReport::default())
        .unwrap()
        .as_object()
        .unwrap()
        .keys()
        .cloned()
        .collect();
    let mut expected: Vec<String> = golden("metrics_header.csv")
        .split(',')
        .map(str::to_string)
        .collect();
    expected.sort();
    assert_eq!(keys, expected);
    assert_eq!(long_header().join(","), golden("sweep_header.csv"));
    assert_eq!(aggregate_header().join(","), golden("aggregate_header.csv"));
}

#[test]
fn shipped_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        agentflow_cli::scenario::Scenario::load(&p)
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 4);
}
