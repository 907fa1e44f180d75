//! Crate-wide error type.
//!
//! One enum covers the whole surface: configuration, the state store, the
//! provider, the sync engine and the lifecycle verbs. CLI code maps these to
//! exit code 1; argument problems are handled separately as usage errors.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the framework.
#[derive(Debug, Error)]
pub enum Error {
    // --- configuration ---
    #[error("malformed config {path}:{line}: {reason}")]
    MalformedConfig {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    // --- state store ---
    #[error("corrupt state store at {path}: {reason}")]
    CorruptState { path: PathBuf, reason: String },
    #[error("resource name already in use: {0}")]
    DuplicateResourceName(String),
    #[error("run name already in use for this job: {0}")]
    DuplicateRunName(String),
    #[error("no such resource: {0}")]
    ResourceNotFound(String),
    #[error("no such run: {0}")]
    RunNotFound(String),

    // --- provider ---
    #[error("no such snapshot: {0}")]
    SnapshotNotFound(String),
    #[error("no such volume: {0}")]
    VolumeNotFound(String),
    #[error("volume already deleted: {0}")]
    VolumeDeleted(String),
    #[error("volume is attached to a running instance: {0}")]
    VolumeInUse(String),
    #[error("no such instance: {0}")]
    InstanceNotFound(String),
    #[error("instance is not running: {0}")]
    InstanceNotRunning(String),
    #[error("unknown instance type: {0}")]
    UnknownInstanceType(String),
    #[error("path not found: {0}")]
    PathNotFound(PathBuf),
    #[error("instance count must be at least 1")]
    ZeroInstanceCount,
    #[error("failed to spawn `{command}`: {source}")]
    CommandSpawn {
        command: String,
        source: io::Error,
    },
    #[error("provider `{0}` is not implemented")]
    NotImplemented(String),

    // --- sync engine ---
    #[error("tree is unreadable at {path}: {source}")]
    TreeUnreadable { path: PathBuf, source: io::Error },
    #[error("transfer failed at {path}: {source}")]
    TransferFailed { path: PathBuf, source: io::Error },

    // --- job directory ---
    #[error("not a directory: {0}")]
    NotADirectory(PathBuf),
    #[error("job directory is missing Results/: {0}")]
    MissingResultsDir(PathBuf),
    #[error("job directory is missing RunResults/: {0}")]
    MissingRunResultsDir(PathBuf),

    // --- lifecycle verbs ---
    #[error("resource is busy with run `{run}`: {resource}")]
    ResourceBusy { resource: String, run: String },
    #[error("resource is terminated: {0}")]
    ResourceTerminated(String),
    #[error("-ebsvol and -snap cannot be specified at the same time")]
    VolumeSpecConflict,
    #[error("an existing volume can only be attached to a resource of size 1")]
    VolumeWithCluster,
    #[error("script not found in job directory: {0}")]
    ScriptNotFound(String),
    #[error("job `{job}` has not been submitted to resource `{resource}`")]
    JobNotSubmitted { job: String, resource: String },
    #[error("no scripts found in job directory")]
    NoScriptsFound,
    #[error("no terminal available to prompt for a script")]
    NonInteractiveSession,
    #[error("run `{run}` exited with code {code}")]
    ExecutionFailed { run: String, code: i32 },

    // --- plumbing ---
    #[error("on instance {instance}: {source}")]
    OnInstance {
        instance: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    /// Wrap an I/O error with a short human context string.
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
