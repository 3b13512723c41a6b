//! Per-stage manifests: config hash, tool version and content digests of
//! every input and output. No timestamps, so reruns compare byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::write_json;

pub const TOOL: &str = "debias";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_file(path)?,
    })
}

pub fn manifest_path(out_dir: &Path, stage: &str) -> PathBuf {
    out_dir.join(format!("manifest.{stage}.json"))
}

impl Manifest {
    pub fn build(
        stage: &str,
        config_hash: &str,
        inputs: &[(&str, &Path)],
        outputs: &[(&str, &Path)],
    ) -> Result<Self> {
        let collect = |files: &[(&str, &Path)]| -> Result<BTreeMap<String, FileDigest>> {
            files.iter().map(|(role, p)| Ok((role.to_string(), digest(p)?))).collect()
        };
        Ok(Self {
            stage: stage.into(),
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: config_hash.into(),
            inputs: collect(inputs)?,
            outputs: collect(outputs)?,
        })
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let p = manifest_path(out_dir, &self.stage);
        write_json(&p, self)?;
        Ok(p)
    }
}
