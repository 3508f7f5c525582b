//! Output directory handling: configuration lock, atomic writes and run
//! manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::formats::pretty;

pub const LOCK_FILE: &str = "config.lock";
pub const MANIFEST_DIR: &str = "manifests";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance of one stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub inputs: Vec<FileRecord>,
    pub artifacts: Vec<FileRecord>,
    pub wall_time_ms: u64,
    pub notes: serde_json::Value,
}

/// An output directory bound to one configuration.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    config_hash: String,
}

impl OutputDir {
    /// Creates `root` if needed. A directory produced under a different
    /// configuration is refused unless `force` is set.
    pub fn open(root: &Path, config_hash: &str, force: bool) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        let lock = root.join(LOCK_FILE);
        if lock.exists() {
            let existing = fs::read_to_string(&lock)?.trim().to_string();
            if existing != config_hash && !force {
                bail!(
                    "{} holds artifacts of a different configuration ({} vs {}); pass --force to overwrite",
                    root.display(),
                    short(&existing),
                    short(config_hash)
                );
            }
        }
        let dir = Self {
            root: root.to_path_buf(),
            config_hash: config_hash.to_string(),
        };
        dir.write_file(LOCK_FILE, format!("{config_hash}\n").as_bytes())?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes through a temporary file in the destination directory and
    /// renames it into place.
    fn write_file(&self, rel: &str, bytes: &[u8]) -> Result<FileRecord> {
        let dest = self.path(rel);
        let parent = dest.parent().expect("artifact paths have a parent");
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&dest)
            .with_context(|| format!("cannot move artifact into {}", dest.display()))?;
        Ok(FileRecord {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        })
    }

    pub fn stage(&self, name: &str) -> StageWriter<'_> {
        StageWriter {
            dir: self,
            stage: name.to_string(),
            inputs: Vec::new(),
            pending: Vec::new(),
            started: std::time::Instant::now(),
        }
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Collects a stage's outputs in memory and publishes them together, so a
/// failing stage leaves nothing behind.
pub struct StageWriter<'a> {
    dir: &'a OutputDir,
    stage: String,
    inputs: Vec<FileRecord>,
    pending: Vec<(String, Vec<u8>)>,
    started: std::time::Instant,
}

impl StageWriter<'_> {
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("cannot read input {}", path.display()))?;
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn add(&mut self, rel: impl Into<String>, bytes: Vec<u8>) {
        self.pending.push((rel.into(), bytes));
    }

    /// Writes every artifact, then the stage manifest listing them.
    pub fn commit(self, notes: serde_json::Value) -> Result<StageManifest> {
        let mut artifacts = Vec::with_capacity(self.pending.len());
        for (rel, bytes) in &self.pending {
            artifacts.push(self.dir.write_file(rel, bytes)?);
        }
        let manifest = StageManifest {
            stage: self.stage.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.dir.config_hash.clone(),
            inputs: self.inputs,
            artifacts,
            wall_time_ms: self.started.elapsed().as_millis() as u64,
            notes,
        };
        self.dir
            .write_file(&format!("{MANIFEST_DIR}/{}.json", self.stage), &pretty(&manifest))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_refuses_other_configs_without_force() {
        let tmp = tempfile::tempdir().unwrap();
        OutputDir::open(tmp.path(), "aaaa", false).unwrap();
        OutputDir::open(tmp.path(), "aaaa", false).unwrap();
        let err = OutputDir::open(tmp.path(), "bbbb", false).unwrap_err();
        assert!(err.to_string().contains("--force"));
        OutputDir::open(tmp.path(), "bbbb", true).unwrap();
        assert_eq!(fs::read_to_string(tmp.path().join(LOCK_FILE)).unwrap(), "bbbb\n");
    }

    #[test]
    fn manifest_lists_every_artifact_with_its_hash() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = OutputDir::open(tmp.path(), "h", false).unwrap();
        let mut st = dir.stage("demo");
        st.add("a.txt", b"alpha".to_vec());
        st.add("report/b.csv", b"x,y\n".to_vec());
        let m = st.commit(serde_json::json!({"k": 4})).unwrap();
        assert_eq!(m.artifacts.len(), 2);
        for a in &m.artifacts {
            assert_eq!(file_sha256(&dir.path(&a.path)).unwrap(), a.sha256);
        }
        assert!(dir.path("manifests/demo.json").exists());
        let leftovers: Vec<_> = fs::read_dir(tmp.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.starts_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
