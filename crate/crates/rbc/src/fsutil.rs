//! Small filesystem helpers shared by the provider and the executor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Recursively copy the regular files and directories of `src` into `dst`.
/// `dst` is created if needed. Symlinks inside `src` are skipped.
pub(crate) fn copy_tree(src: &Path, dst: &Path) -> Result<()> {
    fs::create_dir_all(dst).map_err(|e| Error::io(format!("creating {}", dst.display()), e))?;
    for entry in walkdir::WalkDir::new(src).min_depth(1) {
        let entry = entry.map_err(|e| Error::TreeUnreadable {
            path: src.to_path_buf(),
            source: e.into(),
        })?;
        let rel = entry
            .path()
            .strip_prefix(src)
            .expect("walkdir yields paths under its root");
        let target = dst.join(rel);
        let ftype = entry.file_type();
        if ftype.is_dir() {
            fs::create_dir_all(&target)
                .map_err(|e| Error::io(format!("creating {}", target.display()), e))?;
        } else if ftype.is_file() {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
            fs::copy(entry.path(), &target).map_err(|e| Error::TransferFailed {
                path: entry.path().to_path_buf(),
                source: e,
            })?;
        }
        // Symlinks are neither copied nor followed.
    }
    Ok(())
}

/// Remove everything inside `dir` without removing `dir` itself. Creates
/// `dir` if it does not exist.
pub(crate) fn clear_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(format!("clearing {}", dir.display()), e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}
