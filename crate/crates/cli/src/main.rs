use std::path::PathBuf;
use std::process::ExitCode;

use agentflow_cli::commands::{cmd_replay, cmd_run, cmd_sweep};
use agentflow_cli::output::{out_dir, OUT_ENV};
use agentflow_cli::{CliError, EXIT_INPUT};
use clap::{Parser, Subcommand};

/// Seeded AMR swarm coordination simulator.
#[derive(Debug, Parser)]
#[command(name = "agentflow", version, after_help = format!("Outputs go to ${OUT_ENV} (default ./agentflow-out)."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its metrics.
    Run {
        scenario: PathBuf,
        /// Config overrides such as `n_amrs=300` or `workload.work_units=2`.
        overrides: Vec<String>,
        /// Also write the event log as JSON lines.
        #[arg(long)]
        log: bool,
    },
    /// Run every point of the scenario's sweep block.
    Sweep { scenario: PathBuf },
    /// Re-audit a saved event log.
    Replay {
        log: PathBuf,
        /// Invariants to check (default: all).
        assertions: Vec<String>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            overrides,
            log,
        } => {
            let s = cmd_run(&scenario, &overrides, log, &out_dir())?;
            let r = &s.report;
            println!(
                "tasks {} success {:.2}% latency {:.2} ms mttr {:.2} s",
                r.tasks_generated, r.success_rate_pct, r.latency_mean_ms, r.mttr_s
            );
            for f in &s.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Sweep { scenario } => {
            let s = cmd_sweep(&scenario, &out_dir())?;
            for p in &s.points {
                if let Err(e) = &p.result {
                    eprintln!(
                        "point {}={} seed {} failed: {e}",
                        s.parameter, p.value, p.seed
                    );
                }
            }
            println!("wrote {}", s.long_csv.display());
            println!("wrote {}", s.aggregate_csv.display());
            let failed = s.failed();
            if failed > 0 {
                return Err(CliError::PartialSweep {
                    failed,
                    total: s.points.len(),
                });
            }
        }
        Command::Replay { log, assertions } => {
            let s = cmd_replay(&log, &assertions)?;
            for (inv, _) in &s.checked {
                println!("{inv}: pass");
            }
            println!("{} records audited", s.records);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
