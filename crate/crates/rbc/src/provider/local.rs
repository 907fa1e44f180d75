//! The local sandbox provider.
//!
//! Emulates the compute/storage substrate on the host filesystem. The
//! layout under the work directory is stable and documented for tests:
//!
//! ```text
//! <workdir>/instances/<id>/home/<user>/   instance filesystem
//! <workdir>/instances/<id>/data           mount link -> volume
//! <workdir>/volumes/<id>/                 volume contents
//! <workdir>/snapshots/<id>/               frozen snapshot contents
//! <workdir>/meta.json                     instance/volume/ledger metadata
//! ```
//!
//! An instance is a sandbox directory tree plus locally spawned processes.
//! Remote paths map into the sandbox by stripping the leading `/`, so the
//! remote home `/home/root` of instance `i-0001` lives at
//! `<workdir>/instances/i-0001/home/root/`.
//!
//! Metadata mutations take an advisory lock on `meta.lock` and rewrite
//! `meta.json` via temp-file-plus-rename, so concurrent CLI processes and
//! fan-out threads stay consistent.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clock::now_ms;
use crate::config::rbc_home;
use crate::error::{Error, Result};
use crate::fsutil::copy_tree;

use super::{
    unknown_instance_type, BillingLedger, ExecResult, InstanceHandle, InstanceId, InstanceState,
    LedgerEntry, Provider, SnapshotId, VolumeId, VolumePlan, VolumeRecord, DEFAULT_SNAPSHOT_ID,
};

/// Environment variable overriding the sandbox work directory.
pub const ENV_PROVIDER_WORKDIR: &str = "RBC_PROVIDER_WORKDIR";

/// Sandbox work directory: `RBC_PROVIDER_WORKDIR` or `~/.rbc/sandbox`.
pub fn provider_workdir() -> PathBuf {
    match std::env::var_os(ENV_PROVIDER_WORKDIR) {
        Some(dir) => PathBuf::from(dir),
        None => rbc_home().join("sandbox"),
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Meta {
    /// Source of fresh ids; strictly increasing.
    counter: u64,
    instances: BTreeMap<String, InstanceHandle>,
    volumes: BTreeMap<String, VolumeRecord>,
    snapshots: BTreeMap<String, SnapshotInfo>,
    ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotInfo {
    id: SnapshotId,
    created_at: u64,
}

/// Filesystem-backed sandbox provider.
pub struct LocalProvider {
    workdir: PathBuf,
    remote_user: String,
    remote_home: String,
}

impl LocalProvider {
    /// Open (creating if needed) the sandbox at `workdir`. A fresh sandbox
    /// is seeded with an empty default snapshot so that configurations
    /// pointing at [`DEFAULT_SNAPSHOT_ID`] work out of the box.
    pub fn open(workdir: &Path, remote_user: &str, remote_home: &str) -> Result<Self> {
        for sub in ["instances", "volumes", "snapshots"] {
            let dir = workdir.join(sub);
            fs::create_dir_all(&dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        let provider = LocalProvider {
            workdir: workdir.to_path_buf(),
            remote_user: remote_user.to_string(),
            remote_home: remote_home.to_string(),
        };
        provider.with_meta_mut(|meta| {
            if !meta.snapshots.contains_key(DEFAULT_SNAPSHOT_ID) {
                let dir = provider.snapshot_dir(DEFAULT_SNAPSHOT_ID);
                fs::create_dir_all(&dir)
                    .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
                meta.snapshots.insert(
                    DEFAULT_SNAPSHOT_ID.to_string(),
                    SnapshotInfo {
                        id: SnapshotId(DEFAULT_SNAPSHOT_ID.to_string()),
                        created_at: now_ms(),
                    },
                );
            }
            Ok(())
        })?;
        Ok(provider)
    }

    /// The sandbox work directory this provider operates on.
    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    fn meta_path(&self) -> PathBuf {
        self.workdir.join("meta.json")
    }

    fn lock_path(&self) -> PathBuf {
        self.workdir.join("meta.lock")
    }

    fn snapshot_dir(&self, id: &str) -> PathBuf {
        self.workdir.join("snapshots").join(id)
    }

    fn volume_dir(&self, id: &str) -> PathBuf {
        self.workdir.join("volumes").join(id)
    }

    fn sandbox_root(&self, id: &InstanceId) -> PathBuf {
        self.workdir.join("instances").join(id.as_str())
    }

    /// Map a remote path into an instance's sandbox. Absolute remote paths
    /// are taken from the sandbox root; relative ones from the remote home.
    pub fn resolve_remote(&self, instance: &InstanceId, remote: &str) -> PathBuf {
        let root = self.sandbox_root(instance);
        if let Some(stripped) = remote.strip_prefix('/') {
            root.join(stripped)
        } else {
            let home = self.remote_home.trim_start_matches('/');
            root.join(home).join(remote)
        }
    }

    fn load_meta(&self) -> Result<Meta> {
        let path = self.meta_path();
        if !path.exists() {
            return Ok(Meta::default());
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptState {
            path,
            reason: e.to_string(),
        })
    }

    fn store_meta(&self, meta: &Meta) -> Result<()> {
        let path = self.meta_path();
        let tmp = self.workdir.join("meta.json.tmp");
        let text = serde_json::to_string_pretty(meta).expect("meta serializes");
        let mut f = fs::File::create(&tmp)
            .map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
        f.write_all(text.as_bytes())
            .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        f.sync_all()
            .map_err(|e| Error::io(format!("syncing {}", tmp.display()), e))?;
        fs::rename(&tmp, &path)
            .map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
    }

    fn with_meta_mut<T>(&self, f: impl FnOnce(&mut Meta) -> Result<T>) -> Result<T> {
        let lock = fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.lock_path())
            .map_err(|e| Error::io("opening provider lock", e))?;
        lock.lock().map_err(|e| Error::io("locking provider metadata", e))?;
        let result = (|| {
            let mut meta = self.load_meta()?;
            let out = f(&mut meta)?;
            self.store_meta(&meta)?;
            Ok(out)
        })();
        let _ = lock.unlock();
        result
    }

    fn read_meta(&self) -> Result<Meta> {
        let lock = fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.lock_path())
            .map_err(|e| Error::io("opening provider lock", e))?;
        lock.lock_shared()
            .map_err(|e| Error::io("locking provider metadata", e))?;
        let meta = self.load_meta();
        let _ = lock.unlock();
        meta
    }

    fn fresh_id(meta: &mut Meta, prefix: &str) -> String {
        meta.counter += 1;
        format!("{prefix}-{:04}", meta.counter)
    }

    /// Create a volume record + directory from a snapshot, inside an open
    /// metadata transaction.
    fn create_volume_locked(&self, meta: &mut Meta, snapshot: &SnapshotId) -> Result<VolumeRecord> {
        if !meta.snapshots.contains_key(snapshot.as_str()) {
            return Err(Error::SnapshotNotFound(snapshot.as_str().to_string()));
        }
        let id = Self::fresh_id(meta, "vol");
        copy_tree(&self.snapshot_dir(snapshot.as_str()), &self.volume_dir(&id))?;
        let record = VolumeRecord {
            id: VolumeId(id.clone()),
            source_snapshot: Some(snapshot.clone()),
            attached_to: None,
            deleted: false,
        };
        meta.volumes.insert(id, record.clone());
        Ok(record)
    }
}

impl Provider for LocalProvider {
    fn register_snapshot(&self, template_tree: &Path) -> Result<SnapshotId> {
        if !template_tree.is_dir() {
            return Err(Error::PathNotFound(template_tree.to_path_buf()));
        }
        self.with_meta_mut(|meta| {
            let id = Self::fresh_id(meta, "snap");
            copy_tree(template_tree, &self.snapshot_dir(&id))?;
            meta.snapshots.insert(
                id.clone(),
                SnapshotInfo {
                    id: SnapshotId(id.clone()),
                    created_at: now_ms(),
                },
            );
            Ok(SnapshotId(id))
        })
    }

    fn create_volume(&self, snapshot: &SnapshotId) -> Result<VolumeRecord> {
        self.with_meta_mut(|meta| self.create_volume_locked(meta, snapshot))
    }

    fn provision(
        &self,
        count: usize,
        type_name: &str,
        plan: &VolumePlan,
    ) -> Result<Vec<InstanceHandle>> {
        if count == 0 {
            return Err(Error::ZeroInstanceCount);
        }
        if !super::instance_type_exists(type_name) {
            return Err(unknown_instance_type(type_name));
        }
        if matches!(plan, VolumePlan::Existing(_)) && count > 1 {
            return Err(Error::VolumeWithCluster);
        }

        self.with_meta_mut(|meta| {
            // Validate the plan up front so a failure leaves no instances.
            match plan {
                VolumePlan::FromSnapshot(snap) => {
                    if !meta.snapshots.contains_key(snap.as_str()) {
                        return Err(Error::SnapshotNotFound(snap.as_str().to_string()));
                    }
                }
                VolumePlan::Existing(vol) => {
                    let record = meta
                        .volumes
                        .get(vol.as_str())
                        .ok_or_else(|| Error::VolumeNotFound(vol.as_str().to_string()))?;
                    if record.deleted {
                        return Err(Error::VolumeDeleted(vol.as_str().to_string()));
                    }
                    if record.attached_to.is_some() {
                        return Err(Error::VolumeInUse(vol.as_str().to_string()));
                    }
                }
            }

            let mut handles = Vec::with_capacity(count);
            for _ in 0..count {
                let id = InstanceId(Self::fresh_id(meta, "i"));
                let root = self.sandbox_root(&id);
                let home = root.join("home").join(&self.remote_user);
                fs::create_dir_all(&home)
                    .map_err(|e| Error::io(format!("creating {}", home.display()), e))?;

                let volume_id = match plan {
                    VolumePlan::FromSnapshot(snap) => {
                        self.create_volume_locked(meta, snap)?.id
                    }
                    VolumePlan::Existing(vol) => vol.clone(),
                };
                let volume = meta
                    .volumes
                    .get_mut(volume_id.as_str())
                    .expect("volume exists: validated or just created");
                volume.attached_to = Some(id.clone());
                // The fixed data mount point inside the sandbox.
                std::os::unix::fs::symlink(self.volume_dir(volume_id.as_str()), root.join("data"))
                    .map_err(|e| Error::io("linking data mount", e))?;

                let t = now_ms();
                let handle = InstanceHandle {
                    id: id.clone(),
                    type_name: type_name.to_string(),
                    state: InstanceState::Running,
                    sandbox_root: root,
                    launched_at: t,
                    terminated_at: None,
                    history: vec![(InstanceState::Pending, t), (InstanceState::Running, t)],
                };
                meta.ledger.push(LedgerEntry {
                    instance: id.clone(),
                    type_name: type_name.to_string(),
                    start_ms: t,
                    stop_ms: None,
                });
                meta.instances.insert(id.as_str().to_string(), handle.clone());
                handles.push(handle);
            }
            Ok(handles)
        })
    }

    fn exec_command(
        &self,
        instance: &InstanceId,
        command: &[String],
        env: &BTreeMap<String, String>,
        cwd: &str,
        log_dir: &str,
    ) -> Result<ExecResult> {
        let meta = self.read_meta()?;
        let handle = meta
            .instances
            .get(instance.as_str())
            .ok_or_else(|| Error::InstanceNotFound(instance.as_str().to_string()))?;
        if handle.state != InstanceState::Running {
            return Err(Error::InstanceNotRunning(instance.as_str().to_string()));
        }
        let Some((program, args)) = command.split_first() else {
            return Err(Error::CommandSpawn {
                command: String::new(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
            });
        };

        let local_cwd = self.resolve_remote(instance, cwd);
        if !local_cwd.is_dir() {
            return Err(Error::PathNotFound(local_cwd));
        }
        let local_logs = self.resolve_remote(instance, log_dir);
        fs::create_dir_all(&local_logs)
            .map_err(|e| Error::io(format!("creating {}", local_logs.display()), e))?;
        let stdout_log = local_logs.join("stdout.log");
        let stderr_log = local_logs.join("stderr.log");
        let stdout = fs::File::create(&stdout_log)
            .map_err(|e| Error::io(format!("creating {}", stdout_log.display()), e))?;
        let stderr = fs::File::create(&stderr_log)
            .map_err(|e| Error::io(format!("creating {}", stderr_log.display()), e))?;

        let started = Instant::now();
        let status = Command::new(program)
            .args(args)
            .current_dir(&local_cwd)
            .envs(env)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .status()
            .map_err(|e| Error::CommandSpawn {
                command: program.clone(),
                source: e,
            })?;

        Ok(ExecResult {
            // Signal deaths have no code; report them as -1.
            exit_code: status.code().unwrap_or(-1),
            stdout_log,
            stderr_log,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn open_remote_tree(&self, instance: &InstanceId) -> Result<PathBuf> {
        let meta = self.read_meta()?;
        let handle = meta
            .instances
            .get(instance.as_str())
            .ok_or_else(|| Error::InstanceNotFound(instance.as_str().to_string()))?;
        if handle.state != InstanceState::Running {
            return Err(Error::InstanceNotRunning(instance.as_str().to_string()));
        }
        let root = self.resolve_remote(instance, &self.remote_home);
        fs::create_dir_all(&root)
            .map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        Ok(root)
    }

    fn terminate(&self, instance: &InstanceId) -> Result<()> {
        self.with_meta_mut(|meta| {
            let handle = meta
                .instances
                .get_mut(instance.as_str())
                .ok_or_else(|| Error::InstanceNotFound(instance.as_str().to_string()))?;
            if handle.state == InstanceState::Terminated {
                return Ok(()); // idempotent
            }
            let t = now_ms();
            handle.state = InstanceState::Terminated;
            handle.terminated_at = Some(t);
            handle.history.push((InstanceState::Terminated, t));
            for entry in meta.ledger.iter_mut() {
                if &entry.instance == instance && entry.stop_ms.is_none() {
                    entry.stop_ms = Some(t);
                }
            }
            for volume in meta.volumes.values_mut() {
                if volume.attached_to.as_ref() == Some(instance) {
                    volume.attached_to = None;
                }
            }
            // Reclaim the sandbox; results not yet retrieved are gone.
            let root = self.sandbox_root(instance);
            if root.exists() {
                if let Err(e) = fs::remove_dir_all(&root) {
                    log::warn!("failed to reclaim sandbox {}: {e}", root.display());
                }
            }
            Ok(())
        })
    }

    fn delete_volume(&self, volume: &VolumeId) -> Result<()> {
        self.with_meta_mut(|meta| {
            let record = meta
                .volumes
                .get(volume.as_str())
                .ok_or_else(|| Error::VolumeNotFound(volume.as_str().to_string()))?;
            if record.deleted {
                return Err(Error::VolumeDeleted(volume.as_str().to_string()));
            }
            if let Some(owner) = &record.attached_to {
                let running = meta
                    .instances
                    .get(owner.as_str())
                    .map(|h| h.state != InstanceState::Terminated)
                    .unwrap_or(false);
                if running {
                    return Err(Error::VolumeInUse(volume.as_str().to_string()));
                }
            }
            let record = meta
                .volumes
                .get_mut(volume.as_str())
                .expect("present: fetched above");
            record.deleted = true;
            record.attached_to = None;
            let dir = self.volume_dir(volume.as_str());
            if dir.exists() {
                fs::remove_dir_all(&dir)
                    .map_err(|e| Error::io(format!("reclaiming {}", dir.display()), e))?;
            }
            Ok(())
        })
    }

    fn accrued_seconds(&self, instance: &InstanceId) -> Result<f64> {
        let meta = self.read_meta()?;
        if !meta.instances.contains_key(instance.as_str()) {
            return Err(Error::InstanceNotFound(instance.as_str().to_string()));
        }
        let ledger = BillingLedger {
            entries: meta.ledger,
        };
        Ok(ledger.accrued_ms(instance, now_ms()) as f64 / 1000.0)
    }

    fn describe_instance(&self, instance: &InstanceId) -> Result<InstanceHandle> {
        let meta = self.read_meta()?;
        meta.instances
            .get(instance.as_str())
            .cloned()
            .ok_or_else(|| Error::InstanceNotFound(instance.as_str().to_string()))
    }

    fn instances(&self) -> Result<Vec<InstanceHandle>> {
        Ok(self.read_meta()?.instances.into_values().collect())
    }

    fn volumes(&self) -> Result<Vec<VolumeRecord>> {
        Ok(self.read_meta()?.volumes.into_values().collect())
    }

    fn ledger(&self) -> Result<BillingLedger> {
        Ok(BillingLedger {
            entries: self.read_meta()?.ledger,
        })
    }
}
