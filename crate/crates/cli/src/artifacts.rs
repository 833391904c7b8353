//! `artifacts.json`: every file a command wrote under the run directory, with
//! the command, seed and resolved config that produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hrtf_percept::eval::canonical_json;
use hrtf_percept::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ARTIFACTS_FILE: &str = "artifacts.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub command: String,
    pub kind: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Artifacts {
    pub artifacts: BTreeMap<String, Artifact>,
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }

    /// Path under the run directory, creating its parent.
    pub fn path(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    pub fn record(&self, path: &Path, artifact: Artifact) -> Result<()> {
        let index = self.root.join(ARTIFACTS_FILE);
        let mut all: Artifacts = if index.is_file() {
            let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Json {
                context: index.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            Artifacts::default()
        };
        // outside the run directory the path is kept as given
        let key = path.strip_prefix(&self.root).unwrap_or(path);
        all.artifacts
            .insert(key.to_string_lossy().replace('\\', "/"), artifact);
        std::fs::write(&index, canonical_json(&all)?).map_err(|e| Error::io(&index, e))
    }
}
