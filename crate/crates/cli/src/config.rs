//! Run configuration: a JSON file, optionally seeded from a preset, with
//! command-line overrides applied on top.

use std::path::Path;

use hrtf_percept::dsp::PreprocessConfig;
use hrtf_percept::inr::TrainConfig;
use hrtf_percept::metrics::Metric;
use hrtf_percept::pipeline::Preset;
use hrtf_percept::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_subjects: usize,
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    /// Metrics evaluated by `eval`; the first one drives `select`.
    pub metrics: Vec<Metric>,
    pub select_k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let p = Preset::desk();
        DataConfig {
            n_subjects: p.n_subjects,
            n_azimuth: p.n_azimuth,
            n_elevation: p.n_elevation,
            seed: p.data_seed,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            metrics: vec![Metric::Pbc],
            select_k: 5,
        }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig {
                train: Preset::desk().train,
                ..RunConfig::default()
            }),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    /// Reads a config file. Fields it omits take their values from `base`.
    pub fn load(path: &Path, base: RunConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let patch: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| json_err(path, e))?;
        let mut merged = serde_json::to_value(&base).map_err(|e| json_err(path, e))?;
        merge(&mut merged, patch);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| json_err(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.metrics.is_empty() {
            return Err(Error::Config("no metrics configured".into()));
        }
        if self.select_k == 0 {
            return Err(Error::Config("select_k must be at least 1".into()));
        }
        if self.data.n_subjects < 2 {
            return Err(Error::Config("need at least 2 subjects".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Json {
        context: path.display().to_string(),
        message: e.to_string(),
    }
}

// objects merge key by key, anything else replaces
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_preset_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"epochs": 7}, "select_k": 3}"#).unwrap();
        let c = RunConfig::load(&p, RunConfig::preset("desk").unwrap()).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.latent_dim, 16);
        assert_eq!(c.select_k, 3);
    }

    #[test]
    fn unknown_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"epoch": 7}}"#).unwrap();
        assert!(RunConfig::load(&p, RunConfig::default()).is_err());
    }
}
