//! Run manifest: parameters, seeds, input and artifact checksums.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::seeds::StageSeeds;
use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Input path as configured, or artifact name inside the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub posts_read: usize,
    pub posts_clean: usize,
    pub posts_relevant: usize,
    pub clusters: usize,
    pub summaries: usize,
    pub summary_failures: usize,
    /// Summaries per method over clustered posts.
    pub reduction_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<StageFailure>,
    /// The effective configuration. The output directory is not recorded so
    /// that runs into different directories share a manifest.
    pub config: RunConfig,
    pub seeds: StageSeeds,
    pub stages: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub counts: RunCounts,
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(out_dir.join(MANIFEST_FILE), text)
            .map_err(|e| CliError::stage("manifest", format!("cannot write manifest: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let m: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest {}: {e}", path.display())))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(CliError::Config(format!(
                "manifest format_version {} is not supported (expected {MANIFEST_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        total += n as u64;
    }
    let hex = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, total))
}

pub fn digest(path: &Path, recorded_as: &str) -> std::io::Result<FileDigest> {
    let (sha256, bytes) = sha256_file(path)?;
    Ok(FileDigest {
        path: recorded_as.to_owned(),
        sha256,
        bytes,
    })
}
