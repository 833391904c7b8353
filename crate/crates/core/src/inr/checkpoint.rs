//! PHCK checkpoint container.
//!
//! ```text
//! "PHCK" | u32 version
//! repeated: u32 name_len | name (UTF-8) | u64 payload_len | payload
//! ```
//!
//! The `config` and `trace` sections hold JSON. Every other section is a tensor:
//! u32 rank, rank x u32 dims, then f64 values in row-major order. All integers
//! and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::data::MagnitudeSet;
use crate::dsp::PreprocessConfig;
use crate::error::{Error, Result};
use crate::mmds::MmdsEmbedding;

use super::model::{ModelParams, ModelShape};
use super::train::{LatentTable, LossTrace, TrainConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub shape: ModelShape,
    pub params: ModelParams,
    pub latents: LatentTable,
    pub mmds: Option<MmdsEmbedding>,
    pub freq_bins_hz: Vec<f64>,
    pub trace: LossTrace,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigSection {
    train: TrainConfig,
    preprocess: PreprocessConfig,
    shape: ModelShape,
    latent_ids: Vec<String>,
    mmds_ids: Option<Vec<String>>,
    mmds_fidelity: Option<f64>,
}

impl ModelCheckpoint {
    pub fn validate(&self) -> Result<()> {
        self.params.check_shape(&self.shape)?;
        let (n, d) = self.latents.z.dim();
        if n != self.latents.subject_ids.len() || d != self.shape.latent_dim || n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "latent table {:?} for {} ids and latent dimension {}",
                self.latents.z.dim(),
                self.latents.subject_ids.len(),
                self.shape.latent_dim
            )));
        }
        if self.latents.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite latent".into()));
        }
        if self.freq_bins_hz.len() != self.shape.num_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} frequency bins for a model with {}",
                self.freq_bins_hz.len(),
                self.shape.num_bins
            )));
        }
        if let Some(m) = &self.mmds {
            m.validate()?;
        }
        Ok(())
    }

    /// Errors unless `target` uses this model's frequency bins.
    pub fn check_target(&self, target: &MagnitudeSet) -> Result<()> {
        let same = target.num_bins() == self.freq_bins_hz.len()
            && target
                .freq_bins_hz()
                .iter()
                .zip(&self.freq_bins_hz)
                .all(|(&a, &b)| a as f64 == b);
        if !same {
            return Err(Error::ShapeMismatch(format!(
                "subject {} has frequency bins incompatible with the checkpoint",
                target.subject_id()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = ConfigSection {
            train: self.train.clone(),
            preprocess: self.preprocess.clone(),
            shape: self.shape,
            latent_ids: self.latents.subject_ids.clone(),
            mmds_ids: self.mmds.as_ref().map(|m| m.subject_ids.clone()),
            mmds_fidelity: self.mmds.as_ref().map(|m| m.fidelity),
        };
        write_section(&mut out, "config", &to_json(&config)?);
        write_section(&mut out, "trace", &to_json(&self.trace)?);
        let p = &self.params;
        write_section(&mut out, "w1", &tensor(p.w1.shape(), p.w1.iter()));
        write_section(&mut out, "b1", &tensor(p.b1.shape(), p.b1.iter()));
        write_section(&mut out, "w2", &tensor(p.w2.shape(), p.w2.iter()));
        write_section(&mut out, "b2", &tensor(p.b2.shape(), p.b2.iter()));
        write_section(&mut out, "w_out", &tensor(p.w_out.shape(), p.w_out.iter()));
        write_section(&mut out, "b_out", &tensor(p.b_out.shape(), p.b_out.iter()));
        let z = &self.latents.z;
        write_section(&mut out, "latents", &tensor(z.shape(), z.iter()));
        write_section(
            &mut out,
            "freq_bins",
            &tensor(&[self.freq_bins_hz.len()], self.freq_bins_hz.iter()),
        );
        if let Some(m) = &self.mmds {
            write_section(
                &mut out,
                "mmds_coords",
                &tensor(m.coords.shape(), m.coords.iter()),
            );
            write_section(
                &mut out,
                "mmds_eigenvalues",
                &tensor(&[m.eigenvalues.len()], m.eigenvalues.iter()),
            );
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic.try_into().expect("4 bytes"),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut sections: BTreeMap<String, &[u8]> = BTreeMap::new();
        while r.pos < bytes.len() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Format(format!("section name: {e}")))?
                .to_owned();
            let len = usize::try_from(r.u64()?)
                .map_err(|_| Error::Format("section length overflows".into()))?;
            let payload = r.take(len)?;
            if sections.insert(name.clone(), payload).is_some() {
                return Err(Error::Format(format!("duplicate section {name:?}")));
            }
        }
        let get = |name: &str| -> Result<&[u8]> {
            sections
                .get(name)
                .copied()
                .ok_or_else(|| Error::Format(format!("missing section {name:?}")))
        };
        let config: ConfigSection =
            serde_json::from_slice(get("config")?).map_err(|e| Error::Json {
                context: "checkpoint config".into(),
                message: e.to_string(),
            })?;
        let trace: LossTrace = serde_json::from_slice(get("trace")?).map_err(|e| Error::Json {
            context: "checkpoint trace".into(),
            message: e.to_string(),
        })?;
        let params = ModelParams {
            w1: matrix(get("w1")?)?,
            b1: vector(get("b1")?)?,
            w2: matrix(get("w2")?)?,
            b2: vector(get("b2")?)?,
            w_out: matrix(get("w_out")?)?,
            b_out: vector(get("b_out")?)?,
        };
        let latents = LatentTable {
            subject_ids: config.latent_ids,
            z: matrix(get("latents")?)?,
        };
        let freq_bins_hz = vector(get("freq_bins")?)?.to_vec();
        let mmds = match (config.mmds_ids, config.mmds_fidelity) {
            (Some(ids), Some(fidelity)) => Some(MmdsEmbedding {
                subject_ids: ids,
                coords: matrix(get("mmds_coords")?)?,
                eigenvalues: vector(get("mmds_eigenvalues")?)?.to_vec(),
                fidelity,
            }),
            (None, None) => None,
            _ => return Err(Error::Format("incomplete MMDS metadata".into())),
        };
        let ckpt = ModelCheckpoint {
            train: config.train,
            preprocess: config.preprocess,
            shape: config.shape,
            params,
            latents,
            mmds,
            freq_bins_hz,
            trace,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| Error::Json {
        context: "checkpoint".into(),
        message: e.to_string(),
    })
}

fn write_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn tensor<'a>(shape: &[usize], values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::TruncatedPayload {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn decode_tensor(payload: &[u8]) -> Result<ArrayD<f64>> {
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let rank = r.u32()? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32()? as usize);
    }
    let count: usize = dims.iter().product();
    if payload.len() - r.pos != 8 * count {
        return Err(Error::Format(format!(
            "tensor {:?} needs {} payload bytes, found {}",
            dims,
            8 * count,
            payload.len() - r.pos
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f64()?);
    }
    ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| Error::Format(e.to_string()))
}

fn matrix(payload: &[u8]) -> Result<Array2<f64>> {
    decode_tensor(payload)?
        .into_dimensionality()
        .map_err(|e| Error::Format(format!("expected a matrix: {e}")))
}

fn vector(payload: &[u8]) -> Result<Array1<f64>> {
    decode_tensor(payload)?
        .into_dimensionality()
        .map_err(|e| Error::Format(format!("expected a vector: {e}")))
}

pub fn write_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelCheckpoint::from_bytes(&bytes)
}
