//! Run manifests: resolved configuration, seeds, and input/output file
//! digests for every pipeline invocation. Replaying a manifest re-runs
//! the subcommand with identical arguments and must reproduce outputs
//! byte-identically in single-threaded mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("digest mismatch for {path}: manifest {expected}, file {actual}")]
    DigestMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one subcommand run with every default materialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    /// Flag name (without leading dashes) to resolved value. Boolean
    /// switches carry "true"/"false".
    pub args: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_encode(&hasher.finalize()))
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(subcommand: &str) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            args: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), ManifestError> {
        self.inputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<(), ManifestError> {
        self.outputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<RunManifest, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reconstruct the argv that reproduces this run. Boolean "true"
    /// becomes a bare switch; "false" is dropped.
    pub fn replay_args(&self) -> Vec<String> {
        let mut argv = vec![self.subcommand.clone()];
        for (key, value) in &self.args {
            match value.as_str() {
                "true" => argv.push(format!("--{key}")),
                "false" => {}
                other => {
                    argv.push(format!("--{key}"));
                    argv.push(other.to_string());
                }
            }
        }
        argv
    }

    /// Recompute output digests and compare with the recorded ones.
    pub fn verify_outputs(&self) -> Result<(), ManifestError> {
        for output in &self.outputs {
            let actual = sha256_file(&output.path)?;
            if actual != output.sha256 {
                return Err(ManifestError::DigestMismatch {
                    path: output.path.clone(),
                    expected: output.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("out.txt");
        fs::write(&data, b"payload").unwrap();
        let mut m = RunManifest::new("normalize");
        m.arg("lang", "sql").arg("keep-comments", "false").seed("shuffle", 7);
        m.record_output(&data).unwrap();
        let mpath = dir.path().join("run.manifest.json");
        m.save(&mpath).unwrap();
        let loaded = RunManifest::load(&mpath).unwrap();
        assert_eq!(loaded.subcommand, "normalize");
        assert_eq!(loaded.args["lang"], "sql");
        loaded.verify_outputs().unwrap();

        fs::write(&data, b"tampered").unwrap();
        assert!(matches!(
            loaded.verify_outputs(),
            Err(ManifestError::DigestMismatch { .. })
        ));
    }

    #[test]
    fn replay_args_reconstruct_flags() {
        let mut m = RunManifest::new("vocab-train");
        m.arg("size", "256").arg("verbose", "true").arg("quiet", "false");
        let argv: Vec<String> = m.replay_args();
        assert_eq!(argv, vec!["vocab-train", "--size", "256", "--verbose"]);
    }
}
