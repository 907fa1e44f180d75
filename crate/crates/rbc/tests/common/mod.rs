//! Shared harness for the integration suites: an isolated CLI environment
//! (config, state store and sandbox under one temp dir), job fixtures with
//! shell payloads, and the brute-force tree-comparison oracle.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rbc::config::Config;
use rbc::executor::Session;
use rbc::provider::LocalProvider;
use rbc::state::StateStore;

/// One isolated host: its own config file, state store and sandbox.
pub struct CliEnv {
    pub root: tempfile::TempDir,
}

impl CliEnv {
    pub fn new() -> Self {
        let root = tempfile::tempdir().expect("tempdir");
        fs::write(
            root.path().join("config"),
            "runtime_command=sh {script}\n",
        )
        .expect("write config");
        CliEnv { root }
    }

    /// A config file line beyond the default harness one.
    pub fn append_config(&self, line: &str) {
        let path = self.config_path();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str(line);
        text.push('\n');
        fs::write(&path, text).unwrap();
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.path().join("config")
    }

    pub fn state_path(&self) -> PathBuf {
        self.root.path().join("state.json")
    }

    pub fn sandbox_path(&self) -> PathBuf {
        self.root.path().join("sandbox")
    }

    /// Run `rbc` with this environment's config/state/sandbox.
    pub fn rbc(&self, args: &[&str]) -> Output {
        self.rbc_in(self.root.path(), args)
    }

    /// Run `rbc` from a specific working directory.
    pub fn rbc_in(&self, cwd: &Path, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_rbc"))
            .args(args)
            .current_dir(cwd)
            .env("RBC_CONFIG", self.config_path())
            .env("RBC_STATE", self.state_path())
            .env("RBC_PROVIDER_WORKDIR", self.sandbox_path())
            .output()
            .expect("spawn rbc")
    }

    /// Create an alias entry point (symlink named like the lifecycle tool)
    /// and run it.
    pub fn alias_in(&self, cwd: &Path, alias: &str, args: &[&str]) -> Output {
        let link = self.root.path().join("bin").join(alias);
        fs::create_dir_all(link.parent().unwrap()).unwrap();
        if !link.exists() {
            std::os::unix::fs::symlink(env!("CARGO_BIN_EXE_rbc"), &link).unwrap();
        }
        Command::new(&link)
            .args(args)
            .current_dir(cwd)
            .env("RBC_CONFIG", self.config_path())
            .env("RBC_STATE", self.state_path())
            .env("RBC_PROVIDER_WORKDIR", self.sandbox_path())
            .output()
            .expect("spawn alias")
    }

    /// Current state-store version (0 when the store has never been
    /// written).
    pub fn store_version(&self) -> u64 {
        StateStore::open_at(&self.state_path())
            .expect("open store")
            .version()
            .expect("read version")
    }

    /// In-process session over the same config/state/sandbox the CLI uses.
    pub fn session(&self) -> Session {
        let config = Config {
            runtime_command: "sh {script}".to_string(),
            state_path: self.state_path(),
            ..Config::default()
        };
        let provider = LocalProvider::open(
            &self.sandbox_path(),
            &config.remote_user,
            &config.remote_home,
        )
        .expect("open provider");
        let store = StateStore::open(&config).expect("open store");
        Session::from_parts(config, Box::new(provider), store)
    }
}

/// Create a job directory with `Results/` and `RunResults/`.
pub fn make_job(dir: &Path, name: &str) -> PathBuf {
    let root = dir.join(name);
    fs::create_dir_all(root.join("Results")).unwrap();
    fs::create_dir_all(root.join("RunResults")).unwrap();
    root
}

pub fn write_script(job: &Path, name: &str, body: &str) {
    fs::write(job.join(name), body).unwrap();
}

/// Assert an exit code, echoing the child's output on mismatch.
pub fn assert_exit(output: &Output, expected: i32, context: &str) {
    let code = output.status.code().unwrap_or(-1);
    assert_eq!(
        code,
        expected,
        "{context}: expected exit {expected}, got {code}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
}

/// Every regular file under `root` as relative path -> content bytes.
/// Excluded prefixes are dropped the same way the sync engine's
/// trailing-slash patterns work.
pub fn tree_contents(root: &Path, exclusions: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if !root.exists() {
        return out;
    }
    for entry in walkdir::WalkDir::new(root).min_depth(1) {
        let entry = entry.unwrap();
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap()
            .to_string_lossy()
            .into_owned();
        if exclusions
            .iter()
            .any(|p| rel == p.trim_end_matches('/') || rel.starts_with(p))
        {
            continue;
        }
        out.insert(rel, fs::read(entry.path()).unwrap());
    }
    out
}

/// Brute-force transfer plan: compare every file of both trees byte-wise.
/// Independent of the manifest/diff implementation under test.
pub fn oracle_plan(
    src: &Path,
    dst: &Path,
    exclusions: &[&str],
) -> (Vec<String>, Vec<String>) {
    let src_files = tree_contents(src, exclusions);
    let dst_files = tree_contents(dst, exclusions);
    let mut to_copy = Vec::new();
    let mut to_delete = Vec::new();
    for (path, content) in &src_files {
        if dst_files.get(path) != Some(content) {
            to_copy.push(path.clone());
        }
    }
    for path in dst_files.keys() {
        if !src_files.contains_key(path) {
            to_delete.push(path.clone());
        }
    }
    (to_copy, to_delete)
}
