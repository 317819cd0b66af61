//! Append-only run log: one JSON line per command, listing every file it read or wrote.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output root when inside it.
    pub path: String,
    pub sha256: String,
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub model: String,
    pub id: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub reports: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let mut h = Sha256::new();
    let mut f = fs::File::open(path)?;
    std::io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_str(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let config_hash = sha256_str(&config.to_string());
        let run_id = sha256_str(&format!("{command}\n{config_hash}"))[..12].to_string();
        Self {
            run_id,
            command: command.into(),
            config,
            config_hash,
            started_unix: unix_now(),
            finished_unix: 0,
            inputs: Vec::new(),
            outputs: Vec::new(),
            checkpoints: Vec::new(),
            reports: Vec::new(),
        }
    }

    fn record(root: &Path, path: &Path, kind: &str) -> std::io::Result<FileRecord> {
        let rel = path.strip_prefix(root).unwrap_or(path);
        Ok(FileRecord { path: rel.to_string_lossy().into_owned(), sha256: file_sha256(path)?, kind: kind.into() })
    }

    pub fn input(&mut self, root: &Path, path: &Path, kind: &str) -> std::io::Result<()> {
        let r = Self::record(root, path, kind)?;
        if !self.inputs.contains(&r) {
            self.inputs.push(r);
        }
        Ok(())
    }

    pub fn output(&mut self, root: &Path, path: &Path, kind: &str) -> std::io::Result<()> {
        let r = Self::record(root, path, kind)?;
        self.outputs.retain(|o| o.path != r.path);
        self.outputs.push(r);
        Ok(())
    }

    pub fn append_to(&mut self, root: &Path) -> std::io::Result<PathBuf> {
        self.finished_unix = unix_now();
        fs::create_dir_all(root)?;
        let path = root.join(MANIFEST_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        let line = serde_json::to_string(self).map_err(std::io::Error::other)?;
        writeln!(f, "{line}")?;
        Ok(path)
    }
}

#[cfg(test)]
pub fn read_all(root: &Path) -> std::io::Result<Vec<RunManifest>> {
    let text = fs::read_to_string(root.join(MANIFEST_FILE))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(std::io::Error::other)).collect()
}
