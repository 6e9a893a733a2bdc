//! Run manifests: what was run, on which inputs, and what it cost.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Source revision baked in at build time via `PROMPTOPT_REVISION`, else
/// the package version.
pub fn revision() -> String {
    match option_env!("PROMPTOPT_REVISION") {
        Some(r) => r.to_string(),
        None => format!("promptopt {}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub revision: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub billed_calls: u64,
    pub exit_code: i32,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn begin(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            revision: revision(),
            started_at: now(),
            finished_at: None,
            metrics: BTreeMap::new(),
            billed_calls: 0,
            exit_code: 0,
            error: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn finish(&mut self, exit_code: i32, error: Option<String>) {
        self.finished_at = Some(now());
        self.exit_code = exit_code;
        self.error = error;
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), line: e.line(), message: e.to_string() })
    }
}

/// `<checkpoint>.manifest.json`.
pub fn path_for(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
