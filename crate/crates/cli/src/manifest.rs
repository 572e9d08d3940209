//! Run manifests: the traceability record written next to every
//! command's artifacts.
//!
//! The manifest hash identifies a run by what determines its outputs:
//! the command, the resolved configuration, the seeds, the input data
//! fingerprint, and the split. Paths and timestamps are recorded for
//! humans but excluded from the hash, so re-running the same work in a
//! different directory reproduces the same hash, and every artifact can
//! embed it.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dpml_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArtifactRecord {
    /// Path relative to the output directory.
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_hash: String,
    pub command: String,
    /// Canonical resolved configuration (every key explicit).
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    /// All seeds of a `--repeat` sweep, base seed first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_fingerprint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<String>,
    pub out_dir: String,
    pub created_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<u64>,
    pub artifacts: Vec<ArtifactRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(command: &str, config_text: &str, config_hash: &str, seed: u64) -> RunManifest {
        RunManifest {
            manifest_hash: String::new(),
            command: command.to_string(),
            config: config_text.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            seeds: None,
            data_path: None,
            data_fingerprint: None,
            split: None,
            checkpoint_path: None,
            out_dir: String::new(),
            created_unix: unix_now(),
            finished_unix: None,
            artifacts: Vec::new(),
        }
    }

    /// Computes the identity hash from the run-determining fields. Call
    /// after those fields are final and before stamping artifacts.
    pub fn seal_identity(&mut self) {
        let mut text = String::new();
        text.push_str(&format!("command = {}\n", self.command));
        text.push_str(&format!("config_hash = {}\n", self.config_hash));
        text.push_str(&format!("seed = {}\n", self.seed));
        if let Some(seeds) = &self.seeds {
            let joined: Vec<String> = seeds.iter().map(u64::to_string).collect();
            text.push_str(&format!("seeds = {}\n", joined.join(",")));
        }
        if let Some(fp) = &self.data_fingerprint {
            text.push_str(&format!("data_fingerprint = {fp}\n"));
        }
        if let Some(split) = &self.split {
            text.push_str(&format!("split = {split}\n"));
        }
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.update(self.config.as_bytes());
        self.manifest_hash = format!("{:x}", hasher.finalize());
    }

    /// Hashes an already-written artifact file and records it under its
    /// path relative to `out_dir`.
    pub fn add_artifact(&mut self, out_dir: &Path, rel_name: &str) -> Result<()> {
        let sha256 = hash_file(&out_dir.join(rel_name))?;
        self.artifacts.push(ArtifactRecord { name: rel_name.to_string(), sha256 });
        Ok(())
    }

    pub fn save(&mut self, out_dir: &Path) -> Result<()> {
        self.out_dir = out_dir.display().to_string();
        self.finished_unix = Some(unix_now());
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(out_dir.join(MANIFEST_FILE), json + "\n")?;
        Ok(())
    }

    pub fn load(out_dir: &Path) -> Result<RunManifest> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn artifact(&self, name: &str) -> Option<&ArtifactRecord> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn absolute(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(path)).unwrap_or_else(|_| path.to_path_buf())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_hash_ignores_paths_and_timestamps() {
        let mut a = RunManifest::new("train", "epochs = 3\n", "cfghash", 7);
        a.data_fingerprint = Some("fp".into());
        a.seal_identity();
        let mut b = RunManifest::new("train", "epochs = 3\n", "cfghash", 7);
        b.data_fingerprint = Some("fp".into());
        b.out_dir = "/elsewhere".into();
        b.created_unix = 0;
        b.seal_identity();
        assert_eq!(a.manifest_hash, b.manifest_hash);

        let mut c = RunManifest::new("train", "epochs = 3\n", "cfghash", 8);
        c.data_fingerprint = Some("fp".into());
        c.seal_identity();
        assert_ne!(a.manifest_hash, c.manifest_hash);
    }

    #[test]
    fn save_load_round_trips_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.txt"), "hello").unwrap();
        let mut m = RunManifest::new("gen-data", "", "h", 1);
        m.seal_identity();
        m.add_artifact(dir.path(), "x.txt").unwrap();
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back.manifest_hash, m.manifest_hash);
        assert_eq!(back.artifacts, m.artifacts);
        assert_eq!(back.artifact("x.txt").unwrap().sha256, hash_file(&dir.path().join("x.txt")).unwrap());
    }
}
