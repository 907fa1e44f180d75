//! The lifecycle verbs: gather resources, submit jobs, execute a script
//! under a resource lock, terminate resources.
//!
//! [`Session`] bundles the configuration, the provider and the state store;
//! the verbs are its methods (retrieval lives in [`crate::retrieval`]).
//! Executing a job locks the resource onto it: the busy flip happens inside
//! one atomic store mutation, so concurrent CLI processes cannot start a
//! second run on the same resource.
//!
//! Remote layout per job: `<remote_home>/<job-name>/` mirrors the host job
//! directory, and `<remote_home>/<job-name>/.runs/<run-name>/` holds the
//! per-run results snapshot, the captured logs and the cluster hostfile.
//! `Results/` is cleared at run start and snapshotted at run end, so each
//! run's snapshot is exactly its own output and later runs never clobber
//! earlier ones.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, IsTerminal, Write};
use std::path::Path;
use std::time::Instant;

use crate::clock::now_ms;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fsutil::{clear_dir, copy_tree};
use crate::job::{JobDirectory, RESULTS_DIR, RUN_RESULTS_DIR};
use crate::provider::{provider_from_config, InstanceId, Provider, SnapshotId, VolumeId, VolumePlan};
use crate::state::{ResourceRecord, ResourceState, RunKey, RunRecord, RunStatus, StateStore};
use crate::sync::{sync, TransferStats};

/// Paths excluded from every job submission: `RunResults/` stays on the
/// host, `.runs/` holds remote-side run snapshots that resubmits must not
/// disturb.
pub fn submit_exclusions() -> Vec<String> {
    vec![format!("{RUN_RESULTS_DIR}/"), ".runs/".to_string()]
}

/// Directory under the remote job dir holding per-run snapshots.
pub const RUNS_DIR: &str = ".runs";

/// Storage selection for gathering: a pre-existing volume, a snapshot to
/// instantiate, or the configured default snapshot. Volume and snapshot are
/// mutually exclusive by construction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum EbsSpec {
    Volume(String),
    Snapshot(String),
    #[default]
    Default,
}

/// Where a submission lands on a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubmitTarget {
    /// The master node only.
    #[default]
    Master,
    /// Every node.
    AllNodes,
}

/// Outcome of a gather.
#[derive(Debug)]
pub struct GatherSummary {
    pub record: ResourceRecord,
    pub seconds: f64,
}

/// Outcome of a submit: per-instance transfer statistics, sorted by
/// instance id.
#[derive(Debug)]
pub struct SubmitSummary {
    pub per_instance: Vec<(InstanceId, TransferStats)>,
    pub seconds: f64,
}

/// Outcome of a terminate.
#[derive(Debug)]
pub struct TerminateSummary {
    pub instances_terminated: usize,
    pub volumes_deleted: usize,
    /// Completed runs whose results were never retrieved; gone with the
    /// sandboxes.
    pub unretrieved_runs: Vec<String>,
    pub seconds: f64,
}

/// Configuration, provider and state store for one host.
pub struct Session {
    pub config: Config,
    pub provider: Box<dyn Provider>,
    pub store: StateStore,
}

impl Session {
    /// Open the provider and state store selected by `config`.
    pub fn open(config: Config) -> Result<Self> {
        let provider = provider_from_config(&config)?;
        let store = StateStore::open(&config)?;
        Ok(Session {
            config,
            provider,
            store,
        })
    }

    /// Assemble a session from explicitly constructed parts.
    pub fn from_parts(config: Config, provider: Box<dyn Provider>, store: StateStore) -> Self {
        Session {
            config,
            provider,
            store,
        }
    }

    /// Remote path of a job's directory.
    pub fn remote_job_path(&self, job_name: &str) -> String {
        format!(
            "{}/{}",
            self.config.remote_home.trim_end_matches('/'),
            job_name
        )
    }

    fn remote_run_path(&self, job_name: &str, run_name: &str) -> String {
        format!("{}/{RUNS_DIR}/{run_name}", self.remote_job_path(job_name))
    }

    /// Provision a named resource: `size` instances (a cluster when more
    /// than one), storage per `ebs`, the first instance designated master.
    pub fn gather_resource(
        &self,
        name: &str,
        size: usize,
        instance_type: Option<&str>,
        ebs: &EbsSpec,
        description: &str,
    ) -> Result<GatherSummary> {
        let started = Instant::now();
        if size == 0 {
            return Err(Error::ZeroInstanceCount);
        }
        // Fast duplicate check before provisioning; the register below
        // re-checks atomically.
        if self.store.lookup_resource(name).is_ok() {
            return Err(Error::DuplicateResourceName(name.to_string()));
        }

        let type_name = instance_type.unwrap_or(&self.config.default_instance_type);
        let plan = match ebs {
            EbsSpec::Volume(_) if size > 1 => return Err(Error::VolumeWithCluster),
            EbsSpec::Volume(id) => VolumePlan::Existing(VolumeId(id.clone())),
            EbsSpec::Snapshot(id) => VolumePlan::FromSnapshot(SnapshotId(id.clone())),
            EbsSpec::Default => {
                VolumePlan::FromSnapshot(SnapshotId(self.config.default_snapshot_id.clone()))
            }
        };

        let handles = self.provider.provision(size, type_name, &plan)?;
        let instance_ids: Vec<InstanceId> = handles.iter().map(|h| h.id.clone()).collect();
        let volumes: Vec<VolumeId> = self
            .provider
            .volumes()?
            .into_iter()
            .filter(|v| {
                v.attached_to
                    .as_ref()
                    .map(|owner| instance_ids.contains(owner))
                    .unwrap_or(false)
            })
            .map(|v| v.id)
            .collect();

        let record = ResourceRecord {
            name: name.to_string(),
            description: description.to_string(),
            size,
            master: instance_ids[0].clone(),
            instances: instance_ids.clone(),
            volumes,
            instance_type: type_name.to_string(),
            state: ResourceState::Active,
            created_at: now_ms(),
            phase_seconds: BTreeMap::new(),
        };
        if let Err(e) = self.store.register_resource(record.clone()) {
            // Lost a race on the name: release what we provisioned.
            for id in &instance_ids {
                let _ = self.provider.terminate(id);
            }
            return Err(e);
        }

        let seconds = started.elapsed().as_secs_f64();
        self.store.record_resource_phase(name, "gather", seconds)?;
        let record = self.store.lookup_resource(name)?;
        Ok(GatherSummary { record, seconds })
    }

    fn active_resource(&self, name: &str) -> Result<ResourceRecord> {
        let record = self.store.lookup_resource(name)?;
        match record.state {
            ResourceState::Active => Ok(record),
            ResourceState::Busy => Err(self.busy_error(name)),
            ResourceState::Terminated => Err(Error::ResourceTerminated(name.to_string())),
        }
    }

    fn busy_error(&self, name: &str) -> Error {
        let run = self
            .store
            .snapshot()
            .ok()
            .and_then(|doc| {
                doc.runs
                    .iter()
                    .find(|r| r.resource == name && r.status == RunStatus::Running)
                    .map(|r| r.run_name.clone())
            })
            .unwrap_or_default();
        Error::ResourceBusy {
            resource: name.to_string(),
            run,
        }
    }

    /// Synchronise the job directory to `<remote_home>/<job-name>/` on the
    /// master (default) or on every node. `RunResults/` never leaves the
    /// host; remote run snapshots are untouched.
    pub fn submit_job(
        &self,
        resource_name: &str,
        jobdir: &JobDirectory,
        target: SubmitTarget,
    ) -> Result<SubmitSummary> {
        let started = Instant::now();
        let record = self.active_resource(resource_name)?;
        let targets = match target {
            SubmitTarget::Master => vec![record.master.clone()],
            SubmitTarget::AllNodes => record.instances.clone(),
        };

        let exclusions = submit_exclusions();
        let mut per_instance =
            self.fan_out(&targets, |instance| {
                let tree = self.provider.open_remote_tree(instance)?;
                let dst = tree.join(&jobdir.name);
                let stats = sync(&jobdir.root, &dst, &exclusions)?;
                // The job convention guarantees Results/ exists remotely
                // even before the first execution writes to it.
                fs::create_dir_all(dst.join(RESULTS_DIR))
                    .map_err(|e| Error::io("creating remote Results", e))?;
                Ok(stats)
            })?;
        per_instance.sort_by(|a, b| a.0.cmp(&b.0));

        let seconds = started.elapsed().as_secs_f64();
        self.store
            .record_resource_phase(resource_name, "submit", seconds)?;
        Ok(SubmitSummary {
            per_instance,
            seconds,
        })
    }

    /// Synchronise an arbitrary folder (one not adhering to the job
    /// convention) to `<remote_home>/<basename>/` — no validation, no
    /// exclusions.
    pub fn submit_data(
        &self,
        resource_name: &str,
        data_path: &Path,
        target: SubmitTarget,
    ) -> Result<SubmitSummary> {
        let started = Instant::now();
        if !data_path.is_dir() {
            return Err(Error::NotADirectory(data_path.to_path_buf()));
        }
        let basename = data_path
            .canonicalize()
            .map_err(|e| Error::io(format!("resolving {}", data_path.display()), e))?
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::NotADirectory(data_path.to_path_buf()))?;
        let record = self.active_resource(resource_name)?;
        let targets = match target {
            SubmitTarget::Master => vec![record.master.clone()],
            SubmitTarget::AllNodes => record.instances.clone(),
        };

        let mut per_instance = self.fan_out(&targets, |instance| {
            let tree = self.provider.open_remote_tree(instance)?;
            sync(data_path, &tree.join(&basename), &[])
        })?;
        per_instance.sort_by(|a, b| a.0.cmp(&b.0));

        let seconds = started.elapsed().as_secs_f64();
        self.store
            .record_resource_phase(resource_name, "submit", seconds)?;
        Ok(SubmitSummary {
            per_instance,
            seconds,
        })
    }

    /// Run `work` for each target instance concurrently (cluster fan-out),
    /// tagging any failure with the instance it happened on.
    pub(crate) fn fan_out<T: Send>(
        &self,
        targets: &[InstanceId],
        work: impl Fn(&InstanceId) -> Result<T> + Sync,
    ) -> Result<Vec<(InstanceId, T)>> {
        let results: Vec<(InstanceId, Result<T>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = targets
                .iter()
                .map(|instance| scope.spawn(|| (instance.clone(), work(instance))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fan-out worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(results.len());
        for (instance, result) in results {
            match result {
                Ok(value) => out.push((instance, value)),
                Err(e) => {
                    return Err(Error::OnInstance {
                        instance: instance.as_str().to_string(),
                        source: Box::new(e),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Execute one script of a previously submitted job on the resource's
    /// master node, under the resource lock, as the named run.
    ///
    /// The run record is persisted whatever the payload does; a nonzero
    /// exit is reported as `ExecutionFailed` after the record is finalized.
    pub fn execute_job(
        &self,
        resource_name: &str,
        jobdir: &JobDirectory,
        script: &str,
        run_name: &str,
    ) -> Result<RunRecord> {
        let started = Instant::now();
        let record = self.store.lookup_resource(resource_name)?;
        if record.state == ResourceState::Terminated {
            return Err(Error::ResourceTerminated(resource_name.to_string()));
        }
        if !jobdir.scripts.iter().any(|s| s == script) {
            return Err(Error::ScriptNotFound(script.to_string()));
        }
        let master_tree = self.provider.open_remote_tree(&record.master)?;
        let remote_job_dir = master_tree.join(&jobdir.name);
        if !remote_job_dir.is_dir() {
            return Err(Error::JobNotSubmitted {
                job: jobdir.name.clone(),
                resource: resource_name.to_string(),
            });
        }

        // Lock the resource onto this run (atomic test-and-set).
        let run = RunRecord {
            run_name: run_name.to_string(),
            resource: resource_name.to_string(),
            job: jobdir.name.clone(),
            script: script.to_string(),
            status: RunStatus::Pending,
            exit_code: None,
            created_at: now_ms(),
            started_at: None,
            finished_at: None,
            phase_timings: BTreeMap::new(),
            host_jobdir: jobdir.root.clone(),
        };
        let key = run.key();
        self.store.begin_run(run)?;

        // From here on the lock must be released even on infrastructure
        // failures; such runs finish as failed with exit code -1.
        let result = self.run_payload(&record, jobdir, script, run_name);
        let exit_code = match &result {
            Ok(code) => *code,
            Err(_) => -1,
        };
        self.store
            .finish_run(&key, exit_code, now_ms(), started.elapsed().as_secs_f64())?;
        result?;

        if exit_code != 0 {
            return Err(Error::ExecutionFailed {
                run: run_name.to_string(),
                code: exit_code,
            });
        }
        self.store.lookup_run(&key)
    }

    /// The unlocked middle of execute: prepare trees, run the payload,
    /// snapshot results. Returns the payload exit code.
    fn run_payload(
        &self,
        record: &ResourceRecord,
        jobdir: &JobDirectory,
        script: &str,
        run_name: &str,
    ) -> Result<i32> {
        // Each run's output is exactly its own: clear Results/ everywhere
        // the job dir already exists.
        for instance in &record.instances {
            if let Ok(tree) = self.provider.open_remote_tree(instance) {
                let job_dir = tree.join(&jobdir.name);
                if job_dir.is_dir() {
                    clear_dir(&job_dir.join(RESULTS_DIR))?;
                }
            }
        }

        let (env, hostfile) = self.build_cluster_env(record, &jobdir.name, run_name)?;
        let master_tree = self.provider.open_remote_tree(&record.master)?;
        let run_dir = master_tree.join(&jobdir.name).join(RUNS_DIR).join(run_name);
        fs::create_dir_all(&run_dir).map_err(|e| Error::io("creating run directory", e))?;
        fs::write(run_dir.join("cluster_hosts"), hostfile)
            .map_err(|e| Error::io("writing hostfile", e))?;

        let command = instantiate_runtime_command(&self.config.runtime_command, script);
        self.store.mark_run_running(&self.run_key(record, jobdir, run_name), now_ms())?;
        let exec = self.provider.exec_command(
            &record.master,
            &command,
            &env,
            &self.remote_job_path(&jobdir.name),
            &self.remote_run_path(&jobdir.name, run_name),
        )?;

        // Snapshot Results/ on every node that has the job dir, so
        // all-node retrieval is run-name-faithful too.
        for instance in &record.instances {
            if let Ok(tree) = self.provider.open_remote_tree(instance) {
                let job_dir = tree.join(&jobdir.name);
                let results = job_dir.join(RESULTS_DIR);
                if results.is_dir() {
                    copy_tree(
                        &results,
                        &job_dir.join(RUNS_DIR).join(run_name).join(RESULTS_DIR),
                    )?;
                }
            }
        }
        Ok(exec.exit_code)
    }

    fn run_key(&self, record: &ResourceRecord, jobdir: &JobDirectory, run_name: &str) -> RunKey {
        RunKey {
            resource: record.name.clone(),
            job: jobdir.name.clone(),
            run_name: run_name.to_string(),
        }
    }

    /// Environment and hostfile for a payload: `RBC_RUN_NAME`, `RBC_ROLE`,
    /// `RBC_CLUSTER_SIZE` and `RBC_HOSTFILE`, plus one worker identifier
    /// per hostfile line (the master is excluded). Under the local provider
    /// the identifiers are the workers' job-directory paths, so payloads
    /// can address them directly.
    pub fn build_cluster_env(
        &self,
        record: &ResourceRecord,
        job_name: &str,
        run_name: &str,
    ) -> Result<(BTreeMap<String, String>, String)> {
        let mut hostfile = String::new();
        for instance in &record.instances {
            if instance == &record.master {
                continue;
            }
            let tree = self.provider.open_remote_tree(instance)?;
            hostfile.push_str(&tree.join(job_name).to_string_lossy());
            hostfile.push('\n');
        }

        let master_tree = self.provider.open_remote_tree(&record.master)?;
        let hostfile_path = master_tree
            .join(job_name)
            .join(RUNS_DIR)
            .join(run_name)
            .join("cluster_hosts");

        let mut env = BTreeMap::new();
        env.insert("RBC_RUN_NAME".to_string(), run_name.to_string());
        env.insert("RBC_ROLE".to_string(), "master".to_string());
        env.insert("RBC_CLUSTER_SIZE".to_string(), record.size.to_string());
        env.insert(
            "RBC_HOSTFILE".to_string(),
            hostfile_path.to_string_lossy().into_owned(),
        );
        Ok((env, hostfile))
    }

    /// Release a resource: terminate all instances, close billing, and
    /// optionally delete the attached volumes. The record is tombstoned so
    /// run history stays queryable. Busy resources refuse termination.
    pub fn terminate_resource(
        &self,
        resource_name: &str,
        delete_volumes: bool,
    ) -> Result<TerminateSummary> {
        let started = Instant::now();
        let record = self.store.lookup_resource(resource_name)?;
        if record.state == ResourceState::Busy {
            return Err(self.busy_error(resource_name));
        }

        let unretrieved_runs: Vec<String> = self
            .store
            .snapshot()?
            .runs
            .iter()
            .filter(|r| {
                r.resource == resource_name
                    && matches!(r.status, RunStatus::Succeeded | RunStatus::Failed)
                    && !r.phase_timings.contains_key("retrieve")
            })
            .map(|r| r.run_name.clone())
            .collect();

        let mut instances_terminated = 0;
        for instance in &record.instances {
            if self
                .provider
                .describe_instance(instance)
                .map(|h| h.state != crate::provider::InstanceState::Terminated)
                .unwrap_or(false)
            {
                instances_terminated += 1;
            }
            self.provider.terminate(instance)?;
        }

        let mut volumes_deleted = 0;
        if delete_volumes {
            let known: BTreeMap<String, bool> = self
                .provider
                .volumes()?
                .into_iter()
                .map(|v| (v.id.as_str().to_string(), v.deleted))
                .collect();
            for volume in &record.volumes {
                // Already-deleted volumes are skipped so that repeating a
                // terminate stays a no-op.
                if known.get(volume.as_str()) == Some(&false) {
                    self.provider.delete_volume(volume)?;
                    volumes_deleted += 1;
                }
            }
        }

        self.store.update_resource(resource_name, |r| {
            r.state = ResourceState::Terminated;
            Ok(())
        })?;
        let seconds = started.elapsed().as_secs_f64();
        self.store
            .record_resource_phase(resource_name, "terminate", seconds)?;
        Ok(TerminateSummary {
            instances_terminated,
            volumes_deleted,
            unretrieved_runs,
            seconds,
        })
    }
}

/// Substitute the script into the runtime command template and split it
/// into an argv. The template is whitespace-split; the `{script}` token may
/// appear inside a larger word.
pub fn instantiate_runtime_command(template: &str, script: &str) -> Vec<String> {
    template
        .split_whitespace()
        .map(|word| word.replace("{script}", script))
        .collect()
}

/// Interactively pick a script from the job directory: scripts are listed
/// lexicographically and selected by number. Fails when there is no
/// terminal to prompt on.
pub fn prompt_for_script(jobdir: &JobDirectory) -> Result<String> {
    if jobdir.scripts.is_empty() {
        return Err(Error::NoScriptsFound);
    }
    if !std::io::stdin().is_terminal() {
        return Err(Error::NonInteractiveSession);
    }
    let stdin = std::io::stdin();
    select_script(&jobdir.scripts, stdin.lock(), std::io::stderr())
}

/// Testable core of [`prompt_for_script`]: read 1-based selections from
/// `input` until one is valid. EOF means there is nobody to ask.
pub fn select_script(
    scripts: &[String],
    mut input: impl BufRead,
    mut output: impl Write,
) -> Result<String> {
    if scripts.is_empty() {
        return Err(Error::NoScriptsFound);
    }
    loop {
        writeln!(output, "Scripts in the job directory:").ok();
        for (i, script) in scripts.iter().enumerate() {
            writeln!(output, "  [{}] {script}", i + 1).ok();
        }
        write!(output, "Select a script [1-{}]: ", scripts.len()).ok();
        output.flush().ok();

        let mut line = String::new();
        let n = input
            .read_line(&mut line)
            .map_err(|e| Error::io("reading selection", e))?;
        if n == 0 {
            return Err(Error::NonInteractiveSession);
        }
        if let Ok(choice) = line.trim().parse::<usize>() {
            if (1..=scripts.len()).contains(&choice) {
                return Ok(scripts[choice - 1].clone());
            }
        }
        writeln!(output, "invalid selection").ok();
    }
}
