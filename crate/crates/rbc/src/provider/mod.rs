//! Compute-provider interface and implementations.
//!
//! A provider owns instances (compute), snapshots and volumes (storage),
//! remote command execution and remote tree access. The [`local`] sandbox
//! provider emulates all of this on the host filesystem and is the only
//! fully working implementation; [`cloud`] is a frozen-signature stub so a
//! real adapter can be added without touching callers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};

pub mod cloud;
pub mod local;

pub use local::LocalProvider;

/// Snapshot seeded into a fresh sandbox, standing in for the provider's
/// public image catalog. The built-in config default points at it.
pub const DEFAULT_SNAPSHOT_ID: &str = "snap-default";

/// Opaque instance identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub String);

/// Opaque volume identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VolumeId(pub String);

/// Opaque snapshot identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnapshotId(pub String);

impl InstanceId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl VolumeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl SnapshotId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for VolumeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for SnapshotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lifecycle state of an instance. Transitions are monotone:
/// pending -> running -> terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceState {
    Pending,
    Running,
    Terminated,
}

impl fmt::Display for InstanceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InstanceState::Pending => "pending",
            InstanceState::Running => "running",
            InstanceState::Terminated => "terminated",
        };
        f.write_str(s)
    }
}

/// One provisioned compute node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceHandle {
    pub id: InstanceId,
    pub type_name: String,
    pub state: InstanceState,
    /// Provider-private root of the instance's filesystem (a directory for
    /// the local provider, an address for future providers).
    pub sandbox_root: PathBuf,
    /// Epoch milliseconds.
    pub launched_at: u64,
    /// Set iff `state` is terminated.
    pub terminated_at: Option<u64>,
    /// Every state change with its timestamp, pending first. The local
    /// provider holds pending for 0 ms but still records it, so lifecycle
    /// assertions written against the interface hold for slow providers too.
    pub history: Vec<(InstanceState, u64)>,
}

/// One writable storage unit, instantiated from a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeRecord {
    pub id: VolumeId,
    pub source_snapshot: Option<SnapshotId>,
    pub attached_to: Option<InstanceId>,
    pub deleted: bool,
}

/// One accrual interval for one instance. `stop_ms` is open while the
/// instance runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub instance: InstanceId,
    pub type_name: String,
    pub start_ms: u64,
    pub stop_ms: Option<u64>,
}

/// The simulator's record of per-instance accrued running time, standing in
/// for cloud billing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BillingLedger {
    pub entries: Vec<LedgerEntry>,
}

impl BillingLedger {
    /// Entries that are still accruing.
    pub fn open_entries(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.entries.iter().filter(|e| e.stop_ms.is_none())
    }

    /// Total accrued milliseconds for one instance at time `now_ms`.
    pub fn accrued_ms(&self, instance: &InstanceId, now_ms: u64) -> u64 {
        self.entries
            .iter()
            .filter(|e| &e.instance == instance)
            .map(|e| e.stop_ms.unwrap_or(now_ms).saturating_sub(e.start_ms))
            .sum()
    }
}

/// Outcome of one remote command.
#[derive(Debug, Clone)]
pub struct ExecResult {
    pub exit_code: i32,
    /// Host-visible location of the captured stdout.
    pub stdout_log: PathBuf,
    /// Host-visible location of the captured stderr.
    pub stderr_log: PathBuf,
    pub wall_seconds: f64,
}

/// How provisioning obtains storage for each instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VolumePlan {
    /// One fresh volume per instance, created from this snapshot.
    FromSnapshot(SnapshotId),
    /// Attach this pre-existing volume (single-instance resources only).
    Existing(VolumeId),
}

/// Catalog entry for an instance type. Types affect only metadata and the
/// ledger rate, never functional behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceType {
    pub name: &'static str,
    pub vcpus: u32,
    pub memory_gb: f64,
    pub hourly_rate_usd: f64,
}

/// Static instance-type catalog shipped with the provider.
pub const INSTANCE_TYPES: &[InstanceType] = &[
    InstanceType { name: "t1.micro", vcpus: 1, memory_gb: 0.6, hourly_rate_usd: 0.02 },
    InstanceType { name: "m1.small", vcpus: 1, memory_gb: 1.7, hourly_rate_usd: 0.06 },
    InstanceType { name: "m1.medium", vcpus: 1, memory_gb: 3.75, hourly_rate_usd: 0.12 },
    InstanceType { name: "m1.large", vcpus: 2, memory_gb: 7.5, hourly_rate_usd: 0.24 },
    InstanceType { name: "m1.xlarge", vcpus: 4, memory_gb: 15.0, hourly_rate_usd: 0.48 },
    InstanceType { name: "c1.medium", vcpus: 2, memory_gb: 1.7, hourly_rate_usd: 0.145 },
    InstanceType { name: "c1.xlarge", vcpus: 8, memory_gb: 7.0, hourly_rate_usd: 0.58 },
    InstanceType { name: "m2.2xlarge", vcpus: 4, memory_gb: 34.2, hourly_rate_usd: 0.82 },
    InstanceType { name: "m2.4xlarge", vcpus: 8, memory_gb: 68.4, hourly_rate_usd: 1.64 },
];

/// Look up a catalog entry by name.
pub fn instance_type(name: &str) -> Option<&'static InstanceType> {
    INSTANCE_TYPES.iter().find(|t| t.name == name)
}

/// Whether `name` is in the instance-type catalog.
pub fn instance_type_exists(name: &str) -> bool {
    instance_type(name).is_some()
}

/// The compute-provider interface.
///
/// Implementations must tolerate concurrent calls targeting different
/// instances; calls targeting the same instance may be serialized
/// internally. Several `exec_command`s on distinct instances can run
/// simultaneously.
pub trait Provider: Send + Sync {
    /// Freeze the content of `template_tree` as a new snapshot. Later edits
    /// to the template do not affect the snapshot.
    fn register_snapshot(&self, template_tree: &Path) -> Result<SnapshotId>;

    /// Create a fresh volume whose contents equal the snapshot contents.
    fn create_volume(&self, snapshot: &SnapshotId) -> Result<VolumeRecord>;

    /// Bring up `count` instances of `type_name`, each with storage per
    /// `plan` attached and mounted, all running on return. Opens one billing
    /// entry per instance.
    fn provision(
        &self,
        count: usize,
        type_name: &str,
        plan: &VolumePlan,
    ) -> Result<Vec<InstanceHandle>>;

    /// Run a command on a running instance with `cwd` resolved inside the
    /// instance's tree. stdout/stderr are captured to `stdout.log` /
    /// `stderr.log` under `log_dir` (a remote path); the exit code is
    /// returned faithfully.
    fn exec_command(
        &self,
        instance: &InstanceId,
        command: &[String],
        env: &BTreeMap<String, String>,
        cwd: &str,
        log_dir: &str,
    ) -> Result<ExecResult>;

    /// Host-visible root of the instance's remote home, for the sync engine.
    fn open_remote_tree(&self, instance: &InstanceId) -> Result<PathBuf>;

    /// Terminate an instance: close its billing entry, detach its volumes,
    /// reclaim its storage. Terminating twice is an idempotent no-op.
    fn terminate(&self, instance: &InstanceId) -> Result<()>;

    /// Mark a detached volume deleted and reclaim its storage. Deleting an
    /// already-deleted volume is an error.
    fn delete_volume(&self, volume: &VolumeId) -> Result<()>;

    /// Total open+closed accrual for an instance, in seconds.
    fn accrued_seconds(&self, instance: &InstanceId) -> Result<f64>;

    /// Current handle for one instance.
    fn describe_instance(&self, instance: &InstanceId) -> Result<InstanceHandle>;

    /// All instances, sorted by id.
    fn instances(&self) -> Result<Vec<InstanceHandle>>;

    /// All volumes, sorted by id.
    fn volumes(&self) -> Result<Vec<VolumeRecord>>;

    /// The billing ledger.
    fn ledger(&self) -> Result<BillingLedger>;
}

/// Construct the provider selected by `config.provider`.
///
/// `local` opens the sandbox under [`local::provider_workdir`]; any other
/// selector yields the stub adapter whose operations fail with
/// `NotImplemented`.
pub fn provider_from_config(config: &Config) -> Result<Box<dyn Provider>> {
    if config.provider == "local" {
        let workdir = local::provider_workdir();
        Ok(Box::new(LocalProvider::open(
            &workdir,
            &config.remote_user,
            &config.remote_home,
        )?))
    } else {
        Ok(Box::new(cloud::CloudProvider::new(&config.provider)))
    }
}

pub(crate) fn unknown_instance_type(name: &str) -> Error {
    Error::UnknownInstanceType(name.to_string())
}
