// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifest: one `manifest.json` per output directory recording, for
//! each stage run into it, the configuration, input and output digests,
//! backend ids, eligible counts and timing.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Stage names whose records define the run's identity digest. Report
/// renderings embed the digest and so cannot be part of it.
const REPORT_STAGE: &str = "report";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(role: &str, path: &Path) -> Result<Self> {
        Ok(Self {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    /// Stage parameters such as backend ids or synthetic spec fields.
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: Vec<FileDigest>,
    #[serde(default)]
    pub outputs: Vec<FileDigest>,
    #[serde(default)]
    pub counts: BTreeMap<String, usize>,
    /// Wall-clock time; omitted in deterministic runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Digest of the analysis stages; rendered artifacts quote it.
    pub digest: String,
    pub stages: BTreeMap<String, Stage>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            tool: "neurocat".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            digest: String::new(),
            stages: BTreeMap::new(),
        }
    }
}

impl RunManifest {
    /// Reads `dir/manifest.json`, or starts an empty manifest.
    pub fn load_or_new(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })
    }

    pub fn set_stage(&mut self, name: &str, stage: Stage) {
        self.stages.insert(name.to_string(), stage);
        self.digest = self.compute_digest();
    }

    /// SHA-256 over the analysis stages with timings removed, so identical
    /// runs share a digest.
    pub fn compute_digest(&self) -> String {
        let mut stages = self.stages.clone();
        stages.remove(REPORT_STAGE);
        for s in stages.values_mut() {
            s.elapsed_ms = None;
        }
        let body = serde_json::json!({
            "tool": self.tool,
            "version": self.version,
            "stages": stages,
        });
        sha256_hex(body.to_string().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))
    }
}
