//! Host-side job directory convention.
//!
//! A job is a directory of scripts and data plus two fixed subdirectories:
//! `Results/`, where executions direct their output, and `RunResults/`,
//! which never leaves the host and receives retrieved per-run results.
//! Scripts are the `*.R` files directly under the root; everything else is
//! data.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Subdirectory executions write their output into.
pub const RESULTS_DIR: &str = "Results";
/// Host-only subdirectory holding retrieved per-run results.
pub const RUN_RESULTS_DIR: &str = "RunResults";

/// A validated job directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobDirectory {
    pub root: PathBuf,
    /// Basename of the root; names the remote job directory too.
    pub name: String,
    /// `*.R` files directly under the root, sorted lexicographically.
    pub scripts: Vec<String>,
    pub has_results_dir: bool,
    pub has_runresults_dir: bool,
}

/// Validate `path` as a job directory. Read-only: the tree is untouched.
pub fn validate_job_dir(path: &Path) -> Result<JobDirectory> {
    if !path.is_dir() {
        return Err(Error::NotADirectory(path.to_path_buf()));
    }
    let root = path
        .canonicalize()
        .map_err(|e| Error::io(format!("resolving {}", path.display()), e))?;
    if !root.join(RESULTS_DIR).is_dir() {
        return Err(Error::MissingResultsDir(root));
    }
    if !root.join(RUN_RESULTS_DIR).is_dir() {
        return Err(Error::MissingRunResultsDir(root));
    }

    let mut scripts = Vec::new();
    let entries =
        fs::read_dir(&root).map_err(|e| Error::io(format!("reading {}", root.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", root.display()), e))?;
        if !entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
            continue;
        }
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        // Hidden files are synced as data but are never script candidates.
        if name.starts_with('.') {
            continue;
        }
        if name.ends_with(".R") {
            scripts.push(name.to_string());
        }
    }
    scripts.sort();

    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::NotADirectory(root.clone()))?;

    Ok(JobDirectory {
        name,
        scripts,
        has_results_dir: true,
        has_runresults_dir: true,
        root,
    })
}

/// Resolve the job directory for a command: the flag value when given,
/// otherwise the current working directory.
pub fn resolve_job_dir(flag_value: Option<&Path>) -> Result<JobDirectory> {
    match flag_value {
        Some(path) => validate_job_dir(path),
        None => {
            let cwd = std::env::current_dir()
                .map_err(|e| Error::io("resolving current directory", e))?;
            validate_job_dir(&cwd)
        }
    }
}
