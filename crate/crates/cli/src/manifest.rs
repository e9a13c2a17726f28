//! Run manifests: everything needed to re-execute a run and check its
//! outputs byte for byte.
//!
//! A manifest inlines the parsed config and the effective seed, so replay
//! works even after the original config file is gone. Output files are
//! identified by path relative to the run's output directory plus the
//! SHA-256 of their bytes.

use std::fmt::Write as _;
use std::path::Path;

use midcs_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::OutputFormat;
use crate::config::Config;

/// One produced file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    /// Path relative to the output directory.
    pub path: String,
    /// Lowercase hex SHA-256 of the file bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Version of the binary that produced the run.
    pub artifact_version: String,
    /// Raw argv of the run.
    pub command: Vec<String>,
    /// Subcommand that `replay` re-executes.
    pub subcommand: String,
    /// SHA-256 of the config file bytes as given on disk.
    pub config_sha256: String,
    /// The parsed config, inlined.
    pub config: Config,
    /// Effective master seed (a `--seed` flag overrides the config).
    pub seed: u64,
    /// Batch format restriction, when one was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
    /// RFC 3339 UTC timestamps bracketing the computation.
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").expect("writing to a String cannot fail");
    }
    hex
}

/// Read a manifest file. A missing file is an io error; a file that does
/// not parse as a manifest is a data error.
pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("malformed manifest {}: {e}", path.display())))
}
