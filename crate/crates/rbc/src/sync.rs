//! Manifest-based incremental directory synchronization.
//!
//! A [`Manifest`] is a checksummed inventory of the regular files under a
//! tree; [`diff`] computes the minimal copy/delete plan between two
//! inventories and [`apply`] realizes it. Composing the three gives
//! [`sync`], which makes the destination converge to the source within the
//! synced scope while excluded paths stay invisible on both sides.
//!
//! Change detection is by checksum. Rebuilding a manifest with
//! [`build_manifest_cached`] takes the rsync-style fast path: entries whose
//! size and mtime are unchanged since a previous manifest of the same tree
//! reuse the cached checksum; everything else is re-hashed.
//!
//! Exclusion patterns are deliberately small: a trailing-slash pattern
//! excludes a directory subtree, `*` matches within one path segment, and
//! anything else matches a literal path or subtree. Symbolic links are not
//! followed; they are skipped with a warning.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Size, mtime and content digest of one file at manifest-build time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub size: u64,
    /// Nanoseconds since the epoch.
    pub mtime_ns: i64,
    /// SHA-256 of the content, lowercase hex.
    pub sha256: String,
}

/// Checksummed file inventory of a directory tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Tree the inventory was built from.
    pub root: PathBuf,
    /// Relative path (normalized, `/`-separated) to file metadata.
    pub entries: BTreeMap<String, FileMeta>,
}

/// Minimal transfer plan between two manifests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChangeSet {
    /// New or content-changed paths, sorted.
    pub to_copy: Vec<String>,
    /// Paths present at the destination but absent at the source, sorted.
    pub to_delete: Vec<String>,
    /// Total bytes of `to_copy` entries.
    pub bytes_planned: u64,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.to_copy.is_empty() && self.to_delete.is_empty()
    }
}

/// What an [`apply`] actually did.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TransferStats {
    pub files_copied: u64,
    pub files_deleted: u64,
    pub bytes_copied: u64,
    pub wall_seconds: f64,
}

impl TransferStats {
    pub fn merge(&mut self, other: &TransferStats) {
        self.files_copied += other.files_copied;
        self.files_deleted += other.files_deleted;
        self.bytes_copied += other.bytes_copied;
        self.wall_seconds += other.wall_seconds;
    }
}

/// Whether `path` (relative, `/`-separated) matches any exclusion pattern.
pub fn is_excluded(path: &str, exclusions: &[String]) -> bool {
    exclusions.iter().any(|pattern| {
        if let Some(prefix) = pattern.strip_suffix('/') {
            path == prefix || path.starts_with(pattern)
        } else if pattern.contains('*') {
            glob_match(pattern, path)
        } else {
            path == pattern || path.starts_with(&format!("{pattern}/"))
        }
    })
}

/// `*` matches any run of characters within one path segment.
fn glob_match(pattern: &str, path: &str) -> bool {
    let pat_segments: Vec<&str> = pattern.split('/').collect();
    let path_segments: Vec<&str> = path.split('/').collect();
    if pat_segments.len() != path_segments.len() {
        return false;
    }
    pat_segments
        .iter()
        .zip(&path_segments)
        .all(|(p, s)| segment_match(p, s))
}

fn segment_match(pattern: &str, segment: &str) -> bool {
    // Classic backtracking wildcard match over bytes.
    let (p, s) = (pattern.as_bytes(), segment.as_bytes());
    let (mut pi, mut si) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi < p.len() && (p[pi] == s[si]) {
            pi += 1;
            si += 1;
        } else if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, si));
            pi += 1;
        } else if let Some((star_pi, star_si)) = star {
            pi = star_pi + 1;
            si = star_si + 1;
            star = Some((star_pi, star_si + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == b'*' {
        pi += 1;
    }
    pi == p.len()
}

fn mtime_ns(meta: &fs::Metadata) -> i64 {
    match meta.modified() {
        Ok(t) => match t.duration_since(SystemTime::UNIX_EPOCH) {
            Ok(d) => d.as_nanos() as i64,
            Err(e) => -(e.duration().as_nanos() as i64),
        },
        Err(_) => 0,
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::TreeUnreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::TreeUnreadable {
            path: path.to_path_buf(),
            source: e,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Inventory every regular file under `tree` that does not match an
/// exclusion pattern.
pub fn build_manifest(tree: &Path, exclusions: &[String]) -> Result<Manifest> {
    build_manifest_cached(tree, exclusions, None)
}

/// Like [`build_manifest`], but entries whose size and mtime are unchanged
/// since `prev` (a previous manifest of the same tree) reuse the cached
/// checksum instead of re-reading the file.
pub fn build_manifest_cached(
    tree: &Path,
    exclusions: &[String],
    prev: Option<&Manifest>,
) -> Result<Manifest> {
    if !tree.is_dir() {
        return Err(Error::TreeUnreadable {
            path: tree.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    let mut entries = BTreeMap::new();
    for entry in walkdir::WalkDir::new(tree).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::TreeUnreadable {
            path: tree.to_path_buf(),
            source: e.into(),
        })?;
        if entry.path_is_symlink() {
            log::warn!("skipping symlink {}", entry.path().display());
            continue;
        }
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(tree)
            .expect("walkdir yields paths under its root");
        let Some(rel) = rel.to_str() else {
            log::warn!("skipping non-UTF-8 path {}", rel.display());
            continue;
        };
        if is_excluded(rel, exclusions) {
            continue;
        }
        let meta = entry.metadata().map_err(|e| Error::TreeUnreadable {
            path: entry.path().to_path_buf(),
            source: e.into(),
        })?;
        let size = meta.len();
        let mtime = mtime_ns(&meta);
        let sha256 = match prev.and_then(|m| m.entries.get(rel)) {
            Some(cached) if cached.size == size && cached.mtime_ns == mtime => {
                cached.sha256.clone()
            }
            _ => sha256_file(entry.path())?,
        };
        entries.insert(
            rel.to_string(),
            FileMeta {
                size,
                mtime_ns: mtime,
                sha256,
            },
        );
    }
    Ok(Manifest {
        root: tree.to_path_buf(),
        entries,
    })
}

/// Minimal plan that makes `dst` converge to `src`: copy what is new or
/// changed by checksum, delete what the source no longer has.
pub fn diff(src: &Manifest, dst: &Manifest) -> ChangeSet {
    let mut set = ChangeSet::default();
    for (path, meta) in &src.entries {
        match dst.entries.get(path) {
            Some(existing) if existing.sha256 == meta.sha256 => {}
            _ => {
                set.bytes_planned += meta.size;
                set.to_copy.push(path.clone());
            }
        }
    }
    for path in dst.entries.keys() {
        if !src.entries.contains_key(path) {
            set.to_delete.push(path.clone());
        }
    }
    set
}

/// Apply a change set computed from the current manifests of `src_root` and
/// `dst_root`. Deletions run first, then copies (each staged through a
/// temporary file and renamed into place). On failure the destination is
/// left in a rescannable state and the failing path is reported.
pub fn apply(changeset: &ChangeSet, src_root: &Path, dst_root: &Path) -> Result<TransferStats> {
    let started = Instant::now();
    let mut stats = TransferStats::default();

    for rel in &changeset.to_delete {
        let target = dst_root.join(rel);
        match fs::remove_file(&target) {
            Ok(()) => stats.files_deleted += 1,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => {
                return Err(Error::TransferFailed {
                    path: target,
                    source: e,
                })
            }
        }
    }

    for rel in &changeset.to_copy {
        let from = src_root.join(rel);
        let to = dst_root.join(rel);
        stats.bytes_copied += copy_file(&from, &to)?;
        stats.files_copied += 1;
    }

    stats.wall_seconds = started.elapsed().as_secs_f64();
    Ok(stats)
}

fn copy_file(from: &Path, to: &Path) -> Result<u64> {
    let fail = |source: std::io::Error| Error::TransferFailed {
        path: to.to_path_buf(),
        source,
    };
    let parent = to.parent().expect("destination path has a parent");
    fs::create_dir_all(parent).map_err(fail)?;
    // A directory may be shadowing the file's path after cross-kind changes.
    if to.is_dir() {
        fs::remove_dir_all(to).map_err(fail)?;
    }
    let name = to.file_name().expect("destination path has a file name");
    let tmp = parent.join(format!(".{}.rbc-partial", name.to_string_lossy()));
    let bytes = fs::copy(from, &tmp).map_err(|source| Error::TransferFailed {
        path: from.to_path_buf(),
        source,
    })?;
    fs::rename(&tmp, to).map_err(fail)?;
    Ok(bytes)
}

/// Build both manifests, diff and apply: the destination converges to the
/// source, with excluded paths invisible on both sides.
pub fn sync(src: &Path, dst: &Path, exclusions: &[String]) -> Result<TransferStats> {
    let started = Instant::now();
    fs::create_dir_all(dst).map_err(|e| Error::io(format!("creating {}", dst.display()), e))?;
    let src_manifest = build_manifest(src, exclusions)?;
    let dst_manifest = build_manifest(dst, exclusions)?;
    let changeset = diff(&src_manifest, &dst_manifest);
    let mut stats = apply(&changeset, src, dst)?;
    stats.wall_seconds = started.elapsed().as_secs_f64();
    Ok(stats)
}

impl Manifest {
    /// Debug/test serialization: `path<TAB>size<TAB>mtime<TAB>sha256` lines,
    /// sorted by path, LF-terminated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (path, meta) in &self.entries {
            out.push_str(&format!(
                "{path}\t{}\t{}\t{}\n",
                meta.size, meta.mtime_ns, meta.sha256
            ));
        }
        out
    }

    /// Parse the [`Manifest::to_tsv`] format.
    pub fn from_tsv(root: &Path, text: &str) -> Result<Manifest> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let parsed = (|| -> Option<(String, FileMeta)> {
                let [path, size, mtime, sha256] = fields.as_slice() else {
                    return None;
                };
                Some((
                    path.to_string(),
                    FileMeta {
                        size: size.parse().ok()?,
                        mtime_ns: mtime.parse().ok()?,
                        sha256: sha256.to_string(),
                    },
                ))
            })();
            let (path, meta) = parsed.ok_or_else(|| Error::CorruptState {
                path: root.join("<manifest tsv>"),
                reason: format!("bad manifest line {}", idx + 1),
            })?;
            entries.insert(path, meta);
        }
        Ok(Manifest {
            root: root.to_path_buf(),
            entries,
        })
    }
}
