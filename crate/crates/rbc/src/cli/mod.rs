//! The command surface: five lifecycle verbs with single-dash flags,
//! universal `-h`/`-v`, and per-phase timing output.
//!
//! The `rbc` binary dispatches either on its own subcommands (`rbc gather`,
//! `rbc submit`, ...) or, when invoked through an alias named after a
//! lifecycle tool (`RBC_GatherResource` ...), on the alias itself — so both
//! spellings of every command line work. Exit codes are uniform: 0 success,
//! 1 operational failure, 2 usage error. Diagnostics go to stderr, data and
//! reports to stdout.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::state::{ResourceRecord, RunRecord};

pub mod args;
mod commands;

pub use commands::dispatch;

/// Successful exit.
pub const EXIT_OK: i32 = 0;
/// Operational failure (the command parsed but could not complete).
pub const EXIT_FAILURE: i32 = 1;
/// Usage error (bad flags); nothing was touched.
pub const EXIT_USAGE: i32 = 2;

/// The five lifecycle phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Gather,
    Submit,
    Execute,
    Retrieve,
    Terminate,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Gather => "gather",
            Phase::Submit => "submit",
            Phase::Execute => "execute",
            Phase::Retrieve => "retrieve",
            Phase::Terminate => "terminate",
        }
    }

    /// All phases in lifecycle order.
    pub const LIFECYCLE: [Phase; 5] = [
        Phase::Gather,
        Phase::Submit,
        Phase::Execute,
        Phase::Retrieve,
        Phase::Terminate,
    ];
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wall time of one completed phase.
#[derive(Debug, Clone)]
pub struct PhaseTiming {
    pub phase: Phase,
    pub seconds: f64,
    pub resource: String,
    pub run_name: Option<String>,
}

/// Output format for reports and timing lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Tsv,
}

/// Render one timing line. The TSV form is
/// `phase<TAB>resource<TAB>run<TAB>seconds`, with `-` for a missing run.
pub fn emit_timing(timing: &PhaseTiming, format: ReportFormat) -> String {
    debug_assert!(timing.seconds >= 0.0, "phase durations are non-negative");
    let run = timing.run_name.as_deref().unwrap_or("-");
    match format {
        ReportFormat::Tsv => format!(
            "{}\t{}\t{}\t{:.3}",
            timing.phase, timing.resource, run, timing.seconds
        ),
        ReportFormat::Text => format!(
            "{}: {:.3} s ({}{})",
            timing.phase,
            timing.seconds,
            timing.resource,
            timing
                .run_name
                .as_deref()
                .map(|r| format!(", run {r}"))
                .unwrap_or_default()
        ),
    }
}

/// Write the cumulative lifecycle timing rows for one run to
/// `RunResults/<run-name>/timings.tsv`, in lifecycle order. Called after a
/// retrieval, when gather/submit (resource-scoped) and execute/retrieve
/// (run-scoped) durations are all known; the terminate row is appended
/// later by the terminate command.
pub fn write_run_timings(
    jobdir_root: &Path,
    resource: &ResourceRecord,
    run: &RunRecord,
) -> Result<()> {
    let dir = jobdir_root
        .join(crate::job::RUN_RESULTS_DIR)
        .join(&run.run_name);
    fs::create_dir_all(&dir).map_err(|e| Error::io("creating RunResults", e))?;
    let mut rows = String::new();
    for phase in Phase::LIFECYCLE {
        let (seconds, run_name) = match phase {
            Phase::Gather | Phase::Submit | Phase::Terminate => {
                (resource.phase_seconds.get(phase.name()), None)
            }
            Phase::Execute | Phase::Retrieve => {
                (run.phase_timings.get(phase.name()), Some(run.run_name.clone()))
            }
        };
        if let Some(&seconds) = seconds {
            rows.push_str(&emit_timing(
                &PhaseTiming {
                    phase,
                    seconds,
                    resource: resource.name.clone(),
                    run_name,
                },
                ReportFormat::Tsv,
            ));
            rows.push('\n');
        }
    }
    fs::write(dir.join("timings.tsv"), rows).map_err(|e| Error::io("writing timings.tsv", e))
}

/// Append the terminate row to a run's `timings.tsv`, if that file exists
/// and does not already have one.
pub fn append_terminate_timing(run: &RunRecord, resource: &str, seconds: f64) -> Result<()> {
    let path = run
        .host_jobdir
        .join(crate::job::RUN_RESULTS_DIR)
        .join(&run.run_name)
        .join("timings.tsv");
    if !path.is_file() {
        return Ok(());
    }
    let existing =
        fs::read_to_string(&path).map_err(|e| Error::io("reading timings.tsv", e))?;
    if existing.lines().any(|l| l.starts_with("terminate\t")) {
        return Ok(());
    }
    let mut line = emit_timing(
        &PhaseTiming {
            phase: Phase::Terminate,
            seconds,
            resource: resource.to_string(),
            run_name: None,
        },
        ReportFormat::Tsv,
    );
    line.push('\n');
    fs::write(&path, existing + &line).map_err(|e| Error::io("writing timings.tsv", e))
}
