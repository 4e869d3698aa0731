//! Scenario runner, parameter sweeps and offline log audits.

pub mod commands;
pub mod output;
pub mod scenario;

use agentflow_sim::audit::Violation;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INVARIANT: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid scenario, override, log or argument.
    #[error("{0}")]
    Input(String),
    #[error("{}", describe(.0))]
    Invariant(Vec<Violation>),
    #[error("{failed} of {total} sweep points failed")]
    PartialSweep { failed: usize, total: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn describe(violations: &[Violation]) -> String {
    let mut names: Vec<&str> = violations.iter().map(|v| v.invariant.name()).collect();
    names.dedup();
    let first = violations
        .first()
        .map(|v| v.to_string())
        .unwrap_or_default();
    format!(
        "invariant violated: {} ({} violations; first: {first})",
        names.join(", "),
        violations.len()
    )
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) | Self::Io(_) => EXIT_INPUT,
            Self::Invariant(_) => EXIT_INVARIANT,
            Self::PartialSweep { .. } => EXIT_PARTIAL,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentflow_sim::audit::Invariant;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(CliError::Input("x".into()).exit_code(), EXIT_INPUT);
        assert_eq!(
            CliError::Io(std::io::Error::other("x")).exit_code(),
            EXIT_INPUT
        );
        let v = Violation {
            invariant: Invariant::Conservation,
            tick: 3,
            message: "m".into(),
        };
        let e = CliError::Invariant(vec![v]);
        assert_eq!(e.exit_code(), EXIT_INVARIANT);
        assert!(e.to_string().contains("conservation"));
        assert_eq!(
            CliError::PartialSweep {
                failed: 1,
                total: 2
            }
            .exit_code(),
            EXIT_PARTIAL
        );
    }
}
