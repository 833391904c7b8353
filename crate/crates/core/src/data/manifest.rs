use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::htf::read_htf;
use super::sets::MagnitudeSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub subjects: Vec<SubjectEntry>,
    pub split: Split,
}

impl DatasetManifest {
    /// Checks id uniqueness and split consistency. File existence is checked by
    /// [`DatasetManifest::validate_files`].
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Invariant(format!("duplicate subject id {}", s.id)));
            }
        }
        let mut in_split = HashSet::new();
        for id in self.split.train.iter().chain(&self.split.test) {
            if !ids.contains(id.as_str()) {
                return Err(Error::Invariant(format!(
                    "split id {id} is not a listed subject"
                )));
            }
            if !in_split.insert(id.as_str()) {
                return Err(Error::Invariant(format!(
                    "subject {id} appears twice in the split"
                )));
            }
        }
        Ok(())
    }

    pub fn validate_files(&self, base_dir: &Path) -> Result<()> {
        for s in &self.subjects {
            let p = self.resolve(base_dir, &s.path);
            if !p.is_file() {
                return Err(Error::Invariant(format!(
                    "subject {} file {} does not exist",
                    s.id,
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn resolve(&self, base_dir: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }

    pub fn path_of(&self, base_dir: &Path, id: &str) -> Result<PathBuf> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .map(|s| self.resolve(base_dir, &s.path))
            .ok_or_else(|| Error::Invariant(format!("unknown subject {id}")))
    }

    /// Loads the listed subjects as magnitude sets, in the given order.
    pub fn load_magnitudes(&self, base_dir: &Path, ids: &[String]) -> Result<Vec<MagnitudeSet>> {
        ids.iter()
            .map(|id| {
                let set = read_htf(self.path_of(base_dir, id)?)?.into_magnitude()?;
                if set.subject_id() != id {
                    return Err(Error::Invariant(format!(
                        "file for {id} holds subject {}",
                        set.subject_id()
                    )));
                }
                Ok(set)
            })
            .collect()
    }
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    pub base_dir: PathBuf,
}

impl LoadedManifest {
    pub fn train(&self) -> Result<Vec<MagnitudeSet>> {
        self.manifest
            .load_magnitudes(&self.base_dir, &self.manifest.split.train)
    }

    pub fn test(&self) -> Result<Vec<MagnitudeSet>> {
        self.manifest
            .load_magnitudes(&self.base_dir, &self.manifest.split.test)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate_files(&base_dir)?;
    Ok(LoadedManifest { manifest, base_dir })
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Json {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(train: &[&str], test: &[&str]) -> DatasetManifest {
        DatasetManifest {
            name: "t".into(),
            subjects: ["a", "b", "c"]
                .iter()
                .map(|id| SubjectEntry {
                    id: id.to_string(),
                    path: format!("{id}.htf").into(),
                })
                .collect(),
            split: Split {
                train: train.iter().map(|s| s.to_string()).collect(),
                test: test.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    #[test]
    fn split_must_be_disjoint() {
        assert!(manifest(&["a", "b"], &["c"]).validate().is_ok());
        assert!(manifest(&["a", "b"], &["b"]).validate().is_err());
        assert!(manifest(&["a", "z"], &[]).validate().is_err());
    }

    #[test]
    fn missing_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&["a"], &["b"]);
        let p = dir.path().join("m.json");
        write_manifest(&m, &p).unwrap();
        assert!(read_manifest(&p).is_err());
    }
}
