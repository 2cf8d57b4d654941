//! Stage manifest (one JSON record per completed stage) and the working
//! directory lock.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use skillforge::io::{file_sha256, read_jsonl, to_jsonl, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub stage: String,
    /// SHA-256 over the stage name, input hashes, parameters and seed.
    pub fingerprint: String,
    pub seed: u64,
    /// Path → SHA-256 hex.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub params: serde_json::Value,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    path: PathBuf,
    records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn open(path: &Path) -> Result<Self> {
        let records = if path.exists() {
            read_jsonl(path).with_context(|| format!("cannot read manifest {}", path.display()))?
        } else {
            Vec::new()
        };
        Ok(Self {
            path: path.to_path_buf(),
            records,
        })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn latest(&self, stage: &str) -> Option<&ManifestRecord> {
        self.records.iter().rev().find(|r| r.stage == stage)
    }

    /// The most recent record that wrote `path`.
    pub fn producer_of(&self, path: &str) -> Option<&ManifestRecord> {
        self.records.iter().rev().find(|r| r.outputs.contains_key(path))
    }

    /// Fails when the artifact at `key` no longer matches the hash its
    /// producer recorded.
    pub fn verify(&self, key: &str, actual: &str) -> Result<()> {
        if let Some(rec) = self.producer_of(key) {
            let expected = &rec.outputs[key];
            if expected != actual {
                bail!(
                    "checksum mismatch for {key}: stage `{}` recorded sha256 {expected}, file has {actual}; \
                     the artifact was modified or corrupted (rerun `{}` with --force)",
                    rec.stage,
                    rec.stage
                );
            }
        }
        Ok(())
    }

    pub fn append(&mut self, record: ManifestRecord) -> Result<()> {
        self.records.push(record);
        write_atomic(&self.path, &to_jsonl(&self.records)?)?;
        Ok(())
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(file_sha256(path)?)
}

/// Exclusive lock on a working directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(".skillforge.lock");
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "another pipeline run holds {} (delete it if no run is active)",
                    path.display()
                )
            })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
