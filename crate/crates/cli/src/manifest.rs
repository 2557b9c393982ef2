use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::error::{CliError, Context};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct ConfigDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to a command's primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub subcommand: String,
    /// Digest of the effective arguments after config merging.
    pub args_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigDigest>,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub created_unix: u64,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// What a command read and wrote; the first output names the manifest.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
}

impl Artifacts {
    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.outputs.push(p.to_path_buf());
        self
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }
}

pub fn write_manifest(
    args: &[String],
    subcommand: &str,
    config: Option<&ConfigFile>,
    artifacts: &Artifacts,
) -> Result<Option<PathBuf>, CliError> {
    let Some(primary) = artifacts.outputs.first() else {
        return Ok(None);
    };
    let digests = |paths: &[PathBuf]| -> Result<Vec<FileDigest>, CliError> {
        paths
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    };
    let manifest = RunManifest {
        command_line: args.to_vec(),
        subcommand: subcommand.to_string(),
        args_sha256: sha256_bytes(args[1..].join("\0").as_bytes()),
        config: config.map(|c| ConfigDigest {
            path: c.path.display().to_string(),
            sha256: sha256_bytes(&c.bytes),
        }),
        seeds: artifacts.seeds.clone(),
        threads: rayon::current_num_threads(),
        inputs: digests(&artifacts.inputs)?,
        outputs: digests(&artifacts.outputs)?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let path = manifest_path(primary);
    let text = serde_json::to_string_pretty(&manifest).cat("io")?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    Ok(Some(path))
}
