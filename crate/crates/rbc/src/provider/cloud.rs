//! Stub adapter for real cloud providers.
//!
//! The interface signatures are frozen in [`super::Provider`]; a working
//! adapter can replace this stub without touching callers. Every operation
//! fails with `NotImplemented` naming the selected provider.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{
    BillingLedger, ExecResult, InstanceHandle, InstanceId, Provider, SnapshotId, VolumeId,
    VolumePlan, VolumeRecord,
};

/// Placeholder for a remote-cloud adapter.
pub struct CloudProvider {
    name: String,
}

impl CloudProvider {
    pub fn new(name: &str) -> Self {
        CloudProvider {
            name: name.to_string(),
        }
    }

    fn unimplemented<T>(&self) -> Result<T> {
        Err(Error::NotImplemented(self.name.clone()))
    }
}

impl Provider for CloudProvider {
    fn register_snapshot(&self, _template_tree: &Path) -> Result<SnapshotId> {
        self.unimplemented()
    }

    fn create_volume(&self, _snapshot: &SnapshotId) -> Result<VolumeRecord> {
        self.unimplemented()
    }

    fn provision(
        &self,
        _count: usize,
        _type_name: &str,
        _plan: &VolumePlan,
    ) -> Result<Vec<InstanceHandle>> {
        self.unimplemented()
    }

    fn exec_command(
        &self,
        _instance: &InstanceId,
        _command: &[String],
        _env: &BTreeMap<String, String>,
        _cwd: &str,
        _log_dir: &str,
    ) -> Result<ExecResult> {
        self.unimplemented()
    }

    fn open_remote_tree(&self, _instance: &InstanceId) -> Result<PathBuf> {
        self.unimplemented()
    }

    fn terminate(&self, _instance: &InstanceId) -> Result<()> {
        self.unimplemented()
    }

    fn delete_volume(&self, _volume: &VolumeId) -> Result<()> {
        self.unimplemented()
    }

    fn accrued_seconds(&self, _instance: &InstanceId) -> Result<f64> {
        self.unimplemented()
    }

    fn describe_instance(&self, _instance: &InstanceId) -> Result<InstanceHandle> {
        self.unimplemented()
    }

    fn instances(&self) -> Result<Vec<InstanceHandle>> {
        self.unimplemented()
    }

    fn volumes(&self) -> Result<Vec<VolumeRecord>> {
        self.unimplemented()
    }

    fn ledger(&self) -> Result<BillingLedger> {
        self.unimplemented()
    }
}
