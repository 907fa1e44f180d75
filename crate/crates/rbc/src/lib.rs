//! Lifecycle framework for running an analytics job — a directory of
//! scripts plus data — on gathered compute resources, from a workstation,
//! in five steps: gather resources, submit the job, execute it, retrieve
//! results, terminate the resources.
//!
//! The compute substrate is pluggable behind [`provider::Provider`]; the
//! fully functional [`provider::LocalProvider`] emulates instances,
//! snapshots, volumes and billing on the host filesystem, which makes the
//! whole lifecycle runnable (and testable) at desk scale. Jobs move with a
//! checksum-manifest sync engine, so resubmitting an unchanged directory
//! transfers nothing.
//!
//! The `rbc` binary exposes the five lifecycle verbs (`gather`, `submit`,
//! `execute`, `results`, `terminate`); each capability is also demonstrated
//! by a runnable example in `examples/`.

pub mod cli;
pub mod config;
pub mod error;
pub mod executor;
pub mod job;
pub mod provider;
pub mod retrieval;
pub mod state;
pub mod sync;

mod fsutil;

pub use error::{Error, Result};

pub(crate) mod clock {
    use std::time::{SystemTime, UNIX_EPOCH};

    /// Milliseconds since the epoch.
    pub fn now_ms() -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}
