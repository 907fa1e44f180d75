//! Host-side configuration.
//!
//! Config files are line-oriented `key=value` text. `#` starts a comment,
//! blank lines are ignored, unknown keys are rejected with the offending
//! line number. Every key has a built-in default, so an absent file yields
//! a usable configuration.
//!
//! Resolution order for the file itself: an explicit path argument, then
//! the `RBC_CONFIG` environment variable, then `~/.rbc/config`, then
//! built-in defaults. `RBC_STATE` overrides `state_path` regardless of
//! where the rest of the configuration came from.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::provider;

/// Environment variable naming the config file.
pub const ENV_CONFIG: &str = "RBC_CONFIG";
/// Environment variable overriding the state store location.
pub const ENV_STATE: &str = "RBC_STATE";

/// Host-side defaults used by every command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    /// Snapshot used when neither `-ebsvol` nor `-snap` is given.
    pub default_snapshot_id: String,
    /// Instance type used when `-type` is not given.
    pub default_instance_type: String,
    /// Resource name used when `-rname` is not given.
    pub default_resource_name: String,
    /// Remote account that owns the job tree.
    pub remote_user: String,
    /// Remote directory jobs are synchronised into.
    pub remote_home: String,
    /// Command template for running a script; must contain `{script}`
    /// exactly once.
    pub runtime_command: String,
    /// Compute provider selector (`local` is the only working provider).
    pub provider: String,
    /// Location of the persistent resource/run registry.
    pub state_path: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        let remote_user = "root".to_string();
        Config {
            default_snapshot_id: provider::DEFAULT_SNAPSHOT_ID.to_string(),
            default_instance_type: "m1.xlarge".to_string(),
            default_resource_name: "default_resource".to_string(),
            remote_home: format!("/home/{remote_user}"),
            remote_user,
            runtime_command: "Rscript {script}".to_string(),
            provider: "local".to_string(),
            state_path: rbc_home().join("state.json"),
        }
    }
}

/// `$HOME/.rbc`, the default location for config, state and the sandbox.
pub fn rbc_home() -> PathBuf {
    let home = std::env::var_os("HOME").unwrap_or_else(|| ".".into());
    PathBuf::from(home).join(".rbc")
}

/// Load configuration.
///
/// `path` forces a specific file; it must exist. With no `path`, the
/// `RBC_CONFIG` variable is consulted (the named file must exist), then the
/// default location is probed, and an absent default file simply yields the
/// built-in defaults.
pub fn load_config(path: Option<&Path>) -> Result<Config> {
    let (file, required) = match path {
        Some(p) => (p.to_path_buf(), true),
        None => match std::env::var_os(ENV_CONFIG) {
            Some(p) => (PathBuf::from(p), true),
            None => (rbc_home().join("config"), false),
        },
    };

    let mut config = if file.exists() {
        parse_config_file(&file)?
    } else if required {
        return Err(Error::PathNotFound(file));
    } else {
        Config::default()
    };

    if let Some(state) = std::env::var_os(ENV_STATE) {
        config.state_path = PathBuf::from(state);
    }
    Ok(config)
}

fn parse_config_file(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;

    let mut config = Config::default();
    let mut remote_home_set = false;
    // Line numbers of validated keys, for error reporting.
    let mut runtime_line = 0;
    let mut type_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(malformed(path, lineno, "expected key=value"));
        };
        let key = key.trim();
        let value = value.trim().to_string();
        match key {
            "default_snapshot_id" => config.default_snapshot_id = value,
            "default_instance_type" => {
                config.default_instance_type = value;
                type_line = lineno;
            }
            "default_resource_name" => config.default_resource_name = value,
            "remote_user" => config.remote_user = value,
            "remote_home" => {
                config.remote_home = value;
                remote_home_set = true;
            }
            "runtime_command" => {
                config.runtime_command = value;
                runtime_line = lineno;
            }
            "provider" => config.provider = value,
            "state_path" => config.state_path = PathBuf::from(value),
            _ => {
                return Err(malformed(path, lineno, &format!("unknown key `{key}`")));
            }
        }
    }

    // remote_home defaults to the remote user's home, which may have been
    // changed by a later line.
    if !remote_home_set {
        config.remote_home = format!("/home/{}", config.remote_user);
    }

    if config.runtime_command.matches("{script}").count() != 1 {
        return Err(malformed(
            path,
            runtime_line,
            "runtime_command must contain `{script}` exactly once",
        ));
    }
    if !provider::instance_type_exists(&config.default_instance_type) {
        return Err(malformed(
            path,
            type_line,
            &format!(
                "default_instance_type `{}` is not in the instance-type catalog",
                config.default_instance_type
            ),
        ));
    }
    Ok(config)
}

fn malformed(path: &Path, line: usize, reason: &str) -> Error {
    Error::MalformedConfig {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    }
}
