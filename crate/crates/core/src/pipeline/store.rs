//! Stage directories, content hashes and manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Record of one stage execution. Paths are relative to the run directory
/// and maps are ordered, so the file is a pure function of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub fingerprint: String,
    pub config: serde_json::Value,
    /// Upstream manifests (or raw input files) and their hashes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

/// Hash over the stage name, its configuration slice and its inputs.
pub fn fingerprint(stage: &str, config: &serde_json::Value, inputs: &BTreeMap<String, String>) -> Result<String> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config)?);
    h.update([0]);
    h.update(serde_json::to_vec(inputs)?);
    Ok(hex::encode(h.finalize()))
}

/// The run directory: one subdirectory per stage.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest_rel(stage: &str) -> String {
        format!("{stage}/{MANIFEST}")
    }

    pub fn read_manifest(&self, stage: &str) -> Result<Option<Manifest>> {
        let path = self.path(&Self::manifest_rel(stage));
        match fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes).ok()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// True when every listed output exists with its recorded hash.
    pub fn outputs_intact(&self, m: &Manifest) -> Result<bool> {
        for (rel, hash) in &m.outputs {
            let path = self.path(rel);
            if !path.is_file() || sha256_file(&path)? != *hash {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Manifest of a finished upstream stage, checked against its outputs.
    pub fn require(&self, stage: &str) -> Result<Manifest> {
        let dependency = || Error::Dependency {
            stage: stage.to_string(),
            path: self.path(&Self::manifest_rel(stage)),
        };
        let m = self.read_manifest(stage)?.ok_or_else(dependency)?;
        if !self.outputs_intact(&m)? {
            return Err(dependency());
        }
        Ok(m)
    }

    /// Input entry for an upstream manifest: its path and content hash.
    pub fn upstream_entry(&self, stage: &str) -> Result<(String, String)> {
        self.require(stage)?;
        let rel = Self::manifest_rel(stage);
        Ok((rel.clone(), sha256_file(&self.path(&rel))?))
    }
}

/// Collects the outputs of one stage execution. Writes are sequential and
/// the manifest is written last, so a crashed stage never looks complete.
pub struct StageWriter<'w> {
    ws: &'w Workspace,
    stage: String,
    fingerprint: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'w> StageWriter<'w> {
    /// Clears the stage directory and starts a fresh execution.
    pub fn begin(
        ws: &'w Workspace,
        stage: &str,
        config: serde_json::Value,
        inputs: BTreeMap<String, String>,
        fingerprint: String,
    ) -> Result<Self> {
        let dir = ws.path(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(StageWriter {
            ws,
            stage: stage.to_string(),
            fingerprint,
            config,
            inputs,
            outputs: BTreeMap::new(),
        })
    }

    /// Writes `bytes` to `<stage>/<rel>` and records its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let rel = format!("{}/{rel}", self.stage);
        let path = self.ws.path(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(rel, sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(self) -> Result<Manifest> {
        let m = Manifest {
            stage: self.stage,
            fingerprint: self.fingerprint,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.ws.path(&Workspace::manifest_rel(&m.stage));
        fs::write(&path, m.to_bytes()?).map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }
}
