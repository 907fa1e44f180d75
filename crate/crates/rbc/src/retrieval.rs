//! Fetching a named run's results back to the host.
//!
//! Results land under `<jobdir>/RunResults/<run-name>/`; in all-nodes mode
//! each instance's results are namespaced one level deeper under the
//! instance id, so nodes can never overwrite each other. Retrieval reuses
//! the sync engine, which makes it non-destructive remotely and idempotent:
//! fetching the same run twice copies nothing the second time.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::executor::{Session, RUNS_DIR};
use crate::job::{JobDirectory, RESULTS_DIR, RUN_RESULTS_DIR};
use crate::provider::InstanceId;
use crate::state::{RunKey, RunRecord, RunStatus};
use crate::sync::sync;

/// Which nodes results are fetched from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrieveSource {
    /// The master aggregates results from the workers; fetch from it only.
    #[default]
    Master,
    /// Results are generated on all instances; fetch from each.
    All,
}

/// What one retrieval moved, per node.
#[derive(Debug)]
pub struct RetrievalReport {
    pub run_name: String,
    pub source: RetrieveSource,
    /// Instance id to (files, bytes) copied, sorted by instance id.
    pub per_node: Vec<(InstanceId, (u64, u64))>,
    /// Host directory the results landed in.
    pub destination: PathBuf,
    pub seconds: f64,
}

impl Session {
    /// Fetch the named run's results into `<jobdir>/RunResults/<run-name>/`.
    pub fn get_results(
        &self,
        resource_name: &str,
        jobdir: &JobDirectory,
        run_name: &str,
        source: RetrieveSource,
    ) -> Result<RetrievalReport> {
        let started = std::time::Instant::now();
        let record = self.store.lookup_resource(resource_name)?;
        if record.state == crate::state::ResourceState::Terminated {
            // The sandboxes were reclaimed at terminate; nothing to fetch.
            return Err(Error::ResourceTerminated(resource_name.to_string()));
        }
        let key = RunKey {
            resource: resource_name.to_string(),
            job: jobdir.name.clone(),
            run_name: run_name.to_string(),
        };
        let run = self.store.lookup_run(&key)?;
        if run.status == RunStatus::Running {
            return Err(Error::ResourceBusy {
                resource: resource_name.to_string(),
                run: run_name.to_string(),
            });
        }

        let destination = jobdir.root.join(RUN_RESULTS_DIR).join(run_name);
        let run_results = |instance: &InstanceId| -> Result<PathBuf> {
            Ok(self
                .provider
                .open_remote_tree(instance)?
                .join(&jobdir.name)
                .join(RUNS_DIR)
                .join(run_name)
                .join(RESULTS_DIR))
        };

        let per_node = match source {
            RetrieveSource::Master => {
                let src = run_results(&record.master)?;
                let stats = sync(&src, &destination, &[])?;
                vec![(
                    record.master.clone(),
                    (stats.files_copied, stats.bytes_copied),
                )]
            }
            RetrieveSource::All => {
                let mut fetched = self.fan_out(&record.instances, |instance| {
                    let src = run_results(instance)?;
                    let dst = destination.join(instance.as_str());
                    if !src.is_dir() {
                        // This node never produced results for the run
                        // (e.g. the job was only submitted to the master).
                        std::fs::create_dir_all(&dst)
                            .map_err(|e| Error::io("creating run results dir", e))?;
                        return Ok((0, 0));
                    }
                    let stats = sync(&src, &dst, &[])?;
                    Ok((stats.files_copied, stats.bytes_copied))
                })?;
                fetched.sort_by(|a, b| a.0.cmp(&b.0));
                fetched
            }
        };

        let seconds = started.elapsed().as_secs_f64();
        self.store.record_run_phase(&key, "retrieve", seconds)?;
        Ok(RetrievalReport {
            run_name: run_name.to_string(),
            source,
            per_node,
            destination,
            seconds,
        })
    }

    /// All runs of this job on this resource, chronologically.
    pub fn list_runs(&self, resource_name: &str, jobdir: &JobDirectory) -> Result<Vec<RunRecord>> {
        self.store.list_runs(resource_name, &jobdir.name)
    }
}
