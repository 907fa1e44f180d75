//! Persistent registry of resources and runs.
//!
//! One JSON document at `Config::state_path` holds every resource and run
//! record plus a version counter that strictly increases on every mutation.
//! Multiple CLI processes may run simultaneously: every mutation takes an
//! advisory exclusive lock on a sibling `.lock` file for the whole
//! read-modify-write, readers take a shared lock, and the document is
//! rewritten via temp-file-plus-rename so a crash never leaves a partial
//! store. A failed mutation writes nothing.
//!
//! Terminated resources are tombstoned, not removed, so run history and
//! retrieval error messages stay meaningful.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::provider::{InstanceId, VolumeId};

/// Lifecycle state of a gathered resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceState {
    /// Ready for submit/execute/retrieve.
    Active,
    /// A run is currently executing; the resource is locked onto it.
    Busy,
    /// Tombstone: instances released, history retained.
    Terminated,
}

impl std::fmt::Display for ResourceState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ResourceState::Active => "active",
            ResourceState::Busy => "busy",
            ResourceState::Terminated => "terminated",
        };
        f.write_str(s)
    }
}

/// A named instance or cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub name: String,
    pub description: String,
    /// Number of instances; 1 means a single instance, more means a cluster.
    pub size: usize,
    pub instances: Vec<InstanceId>,
    /// The coordination instance; always one of `instances`.
    pub master: InstanceId,
    pub volumes: Vec<VolumeId>,
    pub instance_type: String,
    pub state: ResourceState,
    /// Epoch milliseconds.
    pub created_at: u64,
    /// Wall seconds of resource-scoped lifecycle phases (gather, submit,
    /// terminate). Run-scoped phases live on the run record.
    pub phase_seconds: BTreeMap<String, f64>,
}

/// Status of one named execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunStatus::Pending => "pending",
            RunStatus::Running => "running",
            RunStatus::Succeeded => "succeeded",
            RunStatus::Failed => "failed",
        };
        f.write_str(s)
    }
}

/// One named execution of one script on one resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_name: String,
    /// Resource the run executed on.
    pub resource: String,
    /// Job-directory name (the remote directory name).
    pub job: String,
    pub script: String,
    pub status: RunStatus,
    /// Present iff the run finished; 0 iff `status` is succeeded.
    pub exit_code: Option<i32>,
    /// Epoch milliseconds at registration.
    pub created_at: u64,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    /// Wall seconds per lifecycle phase (execute, retrieve).
    pub phase_timings: BTreeMap<String, f64>,
    /// Host job directory the run was launched from; lets later commands
    /// find `RunResults/` without re-specifying it.
    pub host_jobdir: PathBuf,
}

impl RunRecord {
    pub fn key(&self) -> RunKey {
        RunKey {
            resource: self.resource.clone(),
            job: self.job.clone(),
            run_name: self.run_name.clone(),
        }
    }
}

/// Uniqueness key for runs: run names distinguish executions of one job on
/// one resource, so uniqueness is scoped to the (resource, job) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunKey {
    pub resource: String,
    pub job: String,
    pub run_name: String,
}

impl std::fmt::Display for RunKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.resource, self.job, self.run_name)
    }
}

/// The serialized document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StateDoc {
    /// Strictly increases on every mutation.
    pub version: u64,
    pub resources: BTreeMap<String, ResourceRecord>,
    pub runs: Vec<RunRecord>,
}

impl StateDoc {
    fn find_run(&self, key: &RunKey) -> Option<usize> {
        self.runs.iter().position(|r| {
            r.resource == key.resource && r.job == key.job && r.run_name == key.run_name
        })
    }
}

/// Handle to the on-disk registry. Cheap to construct; every operation
/// performs its own locked read or read-modify-write.
#[derive(Debug)]
pub struct StateStore {
    path: PathBuf,
    lock_path: PathBuf,
}

impl StateStore {
    /// Open the store named by the config, verifying that an existing
    /// document parses. A missing file is an empty store at version 0; an
    /// unreadable one is `CorruptState` — the store is never silently reset.
    pub fn open(config: &Config) -> Result<Self> {
        Self::open_at(&config.state_path)
    }

    /// Open a store at an explicit path.
    pub fn open_at(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
        }
        let store = StateStore {
            path: path.to_path_buf(),
            lock_path: lock_path_for(path),
        };
        store.load()?; // surface corruption early
        Ok(store)
    }

    /// Location of the underlying document.
    pub fn path(&self) -> &Path {
        &self.path
    }

    fn load(&self) -> Result<StateDoc> {
        if !self.path.exists() {
            return Ok(StateDoc::default());
        }
        let text = fs::read_to_string(&self.path)
            .map_err(|e| Error::io(format!("reading {}", self.path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptState {
            path: self.path.clone(),
            reason: e.to_string(),
        })
    }

    fn store(&self, doc: &StateDoc) -> Result<()> {
        let text = serde_json::to_string_pretty(doc).expect("state serializes");
        let tmp = self.path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp)
            .map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
        f.write_all(text.as_bytes())
            .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        f.sync_all()
            .map_err(|e| Error::io(format!("syncing {}", tmp.display()), e))?;
        fs::rename(&tmp, &self.path)
            .map_err(|e| Error::io(format!("renaming into {}", self.path.display()), e))
    }

    fn lock_file(&self) -> Result<fs::File> {
        fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&self.lock_path)
            .map_err(|e| Error::io("opening state lock", e))
    }

    /// Run one atomic read-modify-write under the exclusive store lock.
    /// If the closure errors, nothing is written and the version does not
    /// change.
    fn mutate<T>(&self, f: impl FnOnce(&mut StateDoc) -> Result<T>) -> Result<T> {
        let lock = self.lock_file()?;
        lock.lock().map_err(|e| Error::io("locking state store", e))?;
        let result = (|| {
            let mut doc = self.load()?;
            let out = f(&mut doc)?;
            doc.version += 1;
            self.store(&doc)?;
            Ok(out)
        })();
        let _ = lock.unlock();
        result
    }

    fn read<T>(&self, f: impl FnOnce(&StateDoc) -> Result<T>) -> Result<T> {
        let lock = self.lock_file()?;
        lock.lock_shared()
            .map_err(|e| Error::io("locking state store", e))?;
        let result = self.load().and_then(|doc| f(&doc));
        let _ = lock.unlock();
        result
    }

    /// Consistent copy of the whole document.
    pub fn snapshot(&self) -> Result<StateDoc> {
        self.read(|doc| Ok(doc.clone()))
    }

    /// Current version (0 for a store that has never been written).
    pub fn version(&self) -> Result<u64> {
        self.read(|doc| Ok(doc.version))
    }

    /// Insert a new resource. The name must be unused; on conflict the
    /// on-disk store is untouched.
    pub fn register_resource(&self, record: ResourceRecord) -> Result<()> {
        self.mutate(|doc| {
            if doc.resources.contains_key(&record.name) {
                return Err(Error::DuplicateResourceName(record.name.clone()));
            }
            doc.resources.insert(record.name.clone(), record);
            Ok(())
        })
    }

    /// Insert a new run. The (resource, job, run-name) triple must be
    /// unused and the resource must exist (terminated counts: history
    /// outlives resources).
    pub fn register_run(&self, run: RunRecord) -> Result<()> {
        self.mutate(|doc| {
            if !doc.resources.contains_key(&run.resource) {
                return Err(Error::ResourceNotFound(run.resource.clone()));
            }
            if doc.find_run(&run.key()).is_some() {
                return Err(Error::DuplicateRunName(run.run_name.clone()));
            }
            doc.runs.push(run);
            Ok(())
        })
    }

    pub fn lookup_resource(&self, name: &str) -> Result<ResourceRecord> {
        self.read(|doc| {
            doc.resources
                .get(name)
                .cloned()
                .ok_or_else(|| Error::ResourceNotFound(name.to_string()))
        })
    }

    pub fn lookup_run(&self, key: &RunKey) -> Result<RunRecord> {
        self.read(|doc| {
            doc.find_run(key)
                .map(|i| doc.runs[i].clone())
                .ok_or_else(|| Error::RunNotFound(key.to_string()))
        })
    }

    /// All runs of one job on one resource, sorted by start time (runs that
    /// never started sort by registration time).
    pub fn list_runs(&self, resource: &str, job: &str) -> Result<Vec<RunRecord>> {
        self.read(|doc| {
            let mut runs: Vec<RunRecord> = doc
                .runs
                .iter()
                .filter(|r| r.resource == resource && r.job == job)
                .cloned()
                .collect();
            runs.sort_by_key(|r| r.started_at.unwrap_or(r.created_at));
            Ok(runs)
        })
    }

    /// Apply an edit to an existing resource record.
    pub fn update_resource(
        &self,
        name: &str,
        edit: impl FnOnce(&mut ResourceRecord) -> Result<()>,
    ) -> Result<()> {
        self.mutate(|doc| {
            let record = doc
                .resources
                .get_mut(name)
                .ok_or_else(|| Error::ResourceNotFound(name.to_string()))?;
            edit(record)
        })
    }

    /// Atomically lock the resource onto a new run: the resource must be
    /// active and the run name unused. This is the resource lock — at most
    /// one run can be in flight per resource.
    pub fn begin_run(&self, run: RunRecord) -> Result<()> {
        self.mutate(|doc| {
            let resource = doc
                .resources
                .get(&run.resource)
                .ok_or_else(|| Error::ResourceNotFound(run.resource.clone()))?;
            match resource.state {
                ResourceState::Active => {}
                ResourceState::Busy => {
                    let in_flight = doc
                        .runs
                        .iter()
                        .find(|r| r.resource == run.resource && r.status == RunStatus::Running)
                        .map(|r| r.run_name.clone())
                        .unwrap_or_default();
                    return Err(Error::ResourceBusy {
                        resource: run.resource.clone(),
                        run: in_flight,
                    });
                }
                ResourceState::Terminated => {
                    return Err(Error::ResourceTerminated(run.resource.clone()));
                }
            }
            if doc.find_run(&run.key()).is_some() {
                return Err(Error::DuplicateRunName(run.run_name.clone()));
            }
            doc.resources
                .get_mut(&run.resource)
                .expect("present: fetched above")
                .state = ResourceState::Busy;
            doc.runs.push(run);
            Ok(())
        })
    }

    /// Transition a run to running.
    pub fn mark_run_running(&self, key: &RunKey, started_at: u64) -> Result<()> {
        self.edit_run(key, |run| {
            run.status = RunStatus::Running;
            run.started_at = Some(started_at);
            Ok(())
        })
    }

    /// Finalize a run and release the resource lock. Status follows the
    /// exit code: 0 is succeeded, anything else is failed.
    pub fn finish_run(
        &self,
        key: &RunKey,
        exit_code: i32,
        finished_at: u64,
        execute_seconds: f64,
    ) -> Result<()> {
        self.mutate(|doc| {
            let idx = doc
                .find_run(key)
                .ok_or_else(|| Error::RunNotFound(key.to_string()))?;
            let run = &mut doc.runs[idx];
            run.status = if exit_code == 0 {
                RunStatus::Succeeded
            } else {
                RunStatus::Failed
            };
            run.exit_code = Some(exit_code);
            run.finished_at = Some(finished_at);
            run.phase_timings.insert("execute".to_string(), execute_seconds);
            if let Some(resource) = doc.resources.get_mut(&key.resource) {
                if resource.state == ResourceState::Busy {
                    resource.state = ResourceState::Active;
                }
            }
            Ok(())
        })
    }

    /// Record a run-scoped phase duration (e.g. retrieve).
    pub fn record_run_phase(&self, key: &RunKey, phase: &str, seconds: f64) -> Result<()> {
        self.edit_run(key, |run| {
            run.phase_timings.insert(phase.to_string(), seconds);
            Ok(())
        })
    }

    /// Record a resource-scoped phase duration (gather, submit, terminate).
    pub fn record_resource_phase(&self, name: &str, phase: &str, seconds: f64) -> Result<()> {
        self.update_resource(name, |record| {
            record.phase_seconds.insert(phase.to_string(), seconds);
            Ok(())
        })
    }

    fn edit_run(&self, key: &RunKey, edit: impl FnOnce(&mut RunRecord) -> Result<()>) -> Result<()> {
        self.mutate(|doc| {
            let idx = doc
                .find_run(key)
                .ok_or_else(|| Error::RunNotFound(key.to_string()))?;
            edit(&mut doc.runs[idx])
        })
    }

    #[cfg(test)]
    fn remove_resource(&self, name: &str) -> Result<()> {
        self.mutate(|doc| {
            doc.resources
                .remove(name)
                .map(|_| ())
                .ok_or_else(|| Error::ResourceNotFound(name.to_string()))
        })
    }
}

fn lock_path_for(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    path.with_file_name(name)
}
