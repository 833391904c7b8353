use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{MagnitudeSet, SphericalGrid};
use crate::dsp::PreprocessConfig;
use crate::error::{Error, Result};
use crate::metrics::LoudnessTables;
use crate::mmds::MmdsEmbedding;

use super::adam::AdamState;
use super::checkpoint::ModelCheckpoint;
use super::encoding::{encode_grid, PosEncoding};
use super::loss::{loss_and_grads, loss_total, LossBreakdown, LossWeights, SubjectBatch};
use super::model::{ModelParams, ModelShape};

/// Standard deviation of the initial latent codes.
pub const LATENT_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossFlags {
    pub align: bool,
    pub pbc: bool,
}

impl LossFlags {
    pub fn label(&self) -> &'static str {
        match (self.align, self.pbc) {
            (false, false) => "l2",
            (true, false) => "l2+align",
            (false, true) => "l2+pbc",
            (true, true) => "l2+align+pbc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub locations_per_step: usize,
    pub lr_weights: f64,
    pub lr_latents: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub loss_flags: LossFlags,
    pub hidden: usize,
    pub num_octaves: usize,
    /// Held-out evaluation period in epochs; 0 keeps the final epoch.
    pub select_every: usize,
    /// Inversion steps per held-out subject during model selection.
    pub select_steps: usize,
    pub invert_lr: f64,
    /// Inversion steps used after training (selection, evaluation).
    pub invert_steps: usize,
    /// Cosine annealing of both learning rates down to this fraction of their
    /// start value by the final epoch. 1 keeps them constant.
    pub lr_final_fraction: f64,
    /// Decoupled (AdamW-style) decay of the weight matrices per unit learning rate.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 32,
            epochs: 300,
            locations_per_step: 256,
            lr_weights: 1e-4,
            lr_latents: 1e-2,
            alpha: 0.3,
            beta: 0.2,
            seed: 0,
            loss_flags: LossFlags::default(),
            hidden: 2048,
            num_octaves: 4,
            select_every: 0,
            select_steps: 50,
            invert_lr: 5e-2,
            invert_steps: 500,
            lr_final_fraction: 1.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim as f64),
            ("epochs", self.epochs as f64),
            ("locations_per_step", self.locations_per_step as f64),
            ("lr_weights", self.lr_weights),
            ("lr_latents", self.lr_latents),
            ("hidden", self.hidden as f64),
            ("invert_lr", self.invert_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "lr_final_fraction must lie in (0, 1], got {}",
                self.lr_final_fraction
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            align: self.loss_flags.align,
            pbc: self.loss_flags.pbc,
        }
    }

    /// Inversion never uses the alignment term: unseen subjects have no MMDS
    /// coordinates.
    pub fn inversion_weights(&self) -> LossWeights {
        LossWeights {
            align: false,
            alpha: 0.0,
            ..self.loss_weights()
        }
    }

    /// Learning-rate multiplier for 1-based `epoch`.
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return 1.0;
        }
        let t = (epoch - 1) as f64 / (self.epochs - 1) as f64;
        let f = self.lr_final_fraction;
        f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn encoding(&self) -> PosEncoding {
        PosEncoding {
            num_octaves: self.num_octaves,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub subject_ids: Vec<String>,
    /// N x D.
    pub z: Array2<f64>,
}

impl LatentTable {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.subject_ids.iter().position(|s| s == id)
    }

    pub fn row(&self, id: &str) -> Result<Array1<f64>> {
        self.index_of(id)
            .map(|i| self.z.row(i).to_owned())
            .ok_or_else(|| Error::Config(format!("subject {id:?} is not in the latent table")))
    }

    pub fn mean(&self) -> Array1<f64> {
        self.z.mean_axis(Axis(0)).expect("non-empty latent table")
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub l2: f64,
    pub align: f64,
    pub pbc: f64,
    /// Only on epochs where held-out selection ran; omitted otherwise so the
    /// trace can go into a report, which refuses nulls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub initial_l2: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
}

/// Targets and encodings shared by training and inversion.
pub(crate) struct Prepared {
    pub enc: Array2<f64>,
    pub targets: Vec<Array3<f64>>,
}

pub(crate) fn prepare(sets: &[&MagnitudeSet], encoding: PosEncoding) -> Result<Prepared> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Config("no subjects".into()))?;
    for s in &sets[1..] {
        first.check_compatible(s)?;
    }
    Ok(Prepared {
        enc: encode_grid(first.grid(), encoding),
        targets: sets.iter().map(|s| s.to_f64()).collect(),
    })
}

// decoupled weight decay on the three weight matrices, not the biases
fn step_params(
    params: &mut ModelParams,
    states: &mut [AdamState],
    grads: &ModelParams,
    lr: f64,
    weight_decay: f64,
) {
    for (i, ((p, g), st)) in params
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(states)
        .enumerate()
    {
        if weight_decay > 0.0 && i % 2 == 0 {
            let shrink = 1.0 - lr * weight_decay;
            p.iter_mut().for_each(|v| *v *= shrink);
        }
        st.step(p, g, lr);
    }
}

/// Adam on a single latent vector with the weights frozen. Returns the final
/// latent and the loss breakdown evaluated there.
pub(crate) fn invert_prepared(
    params: &ModelParams,
    enc: &Array2<f64>,
    target: &Array3<f64>,
    z0: Array1<f64>,
    steps: usize,
    lr: f64,
    weights: &LossWeights,
    tables: Option<&LoudnessTables>,
) -> Result<(Array1<f64>, LossBreakdown)> {
    let mut z = z0.insert_axis(Axis(0));
    let batch = [SubjectBatch {
        latent_row: 0,
        enc: enc.clone(),
        target: target.clone(),
        z_mds: None,
    }];
    let mut state = AdamState::new(z.ncols());
    for _ in 0..steps {
        let (_, g) = loss_and_grads(params, &z, &batch, weights, tables, false)?;
        let row = z.as_slice_mut().expect("standard layout");
        state.step(row, g.latents[0].1.as_slice().expect("standard layout"), lr);
    }
    let l = loss_total(params, &z, &batch, weights, tables)?;
    Ok((z.row(0).to_owned(), l))
}

/// Generative latent optimization of the decoder and one latent per training
/// subject. With a non-empty `heldout` set the parameters of the epoch with the
/// lowest held-out reconstruction L2 are kept; otherwise the final epoch.
pub fn train_glo(
    train: &[MagnitudeSet],
    heldout: &[MagnitudeSet],
    mmds: Option<&MmdsEmbedding>,
    cfg: &TrainConfig,
    preprocess: &PreprocessConfig,
) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    let all: Vec<&MagnitudeSet> = train.iter().chain(heldout).collect();
    let prep = prepare(&all, cfg.encoding())?;
    let (enc, targets) = (&prep.enc, &prep.targets);
    let n = train.len();
    let ids: Vec<String> = train.iter().map(|s| s.subject_id().to_owned()).collect();
    let freq_bins: Vec<f64> = train[0].freq_bins_f64();
    let shape = ModelShape {
        hidden: cfg.hidden,
        encoding: cfg.encoding(),
        latent_dim: cfg.latent_dim,
        num_bins: train[0].num_bins(),
    };
    let z_mds: Vec<Option<Array1<f64>>> = if cfg.loss_flags.align {
        let m =
            mmds.ok_or_else(|| Error::Config("align flag set without an MMDS embedding".into()))?;
        if m.dim() != cfg.latent_dim {
            return Err(Error::Config(format!(
                "MMDS dimension {} differs from latent dimension {}",
                m.dim(),
                cfg.latent_dim
            )));
        }
        ids.iter()
            .map(|id| m.coords_of(id).map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; n]
    };
    let tables = LoudnessTables::new(&freq_bins);
    let weights = cfg.loss_weights();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(&shape, &mut rng);
    let normal = Normal::new(0.0, LATENT_INIT_STD).expect("valid normal");
    let mut z = Array2::from_shape_fn((n, cfg.latent_dim), |_| normal.sample(&mut rng));

    let full_batch: Vec<SubjectBatch> = (0..n)
        .map(|i| SubjectBatch {
            latent_row: i,
            enc: enc.clone(),
            target: targets[i].clone(),
            z_mds: None,
        })
        .collect();
    let initial_l2 = loss_total(&params, &z, &full_batch, &LossWeights::l2_only(), None)?.l2;
    drop(full_batch);

    let mut param_states: Vec<AdamState> = params
        .slices()
        .iter()
        .map(|s| AdamState::new(s.len()))
        .collect();
    let mut latent_states: Vec<AdamState> =
        (0..n).map(|_| AdamState::new(cfg.latent_dim)).collect();
    let locations = enc.nrows();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams, Array2<f64>)> = None;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let decay = cfg.lr_factor(epoch);
        let mut acc = LossBreakdown::default();
        for &s in &order {
            let batch = if locations <= cfg.locations_per_step {
                SubjectBatch {
                    latent_row: s,
                    enc: enc.clone(),
                    target: targets[s].clone(),
                    z_mds: z_mds[s].clone(),
                }
            } else {
                let mut idx = rand::seq::index::sample(&mut rng, locations, cfg.locations_per_step)
                    .into_vec();
                idx.sort_unstable();
                SubjectBatch {
                    latent_row: s,
                    enc: enc.select(Axis(0), &idx),
                    target: targets[s].select(Axis(0), &idx),
                    z_mds: z_mds[s].clone(),
                }
            };
            let (l, g) = loss_and_grads(&params, &z, &[batch], &weights, Some(&tables), true)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!(
                        "training diverged at epoch {epoch}: {m}; trace so far {records:?}"
                    )),
                    other => other,
                })?;
            step_params(
                &mut params,
                &mut param_states,
                g.params.as_ref().expect("requested"),
                cfg.lr_weights * decay,
                cfg.weight_decay,
            );
            for (row, dz) in &g.latents {
                let mut r = z.row_mut(*row);
                latent_states[*row].step(
                    r.as_slice_mut().expect("standard layout"),
                    dz.as_slice().expect("standard layout"),
                    cfg.lr_latents * decay,
                );
            }
            acc.total += l.total / n as f64;
            acc.l2 += l.l2 / n as f64;
            acc.align += l.align / n as f64;
            acc.pbc += l.pbc / n as f64;
        }
        if !acc.total.is_finite()
            || params
                .slices()
                .iter()
                .any(|s| s.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numerical(format!(
                "training diverged at epoch {epoch}; trace so far {records:?}"
            )));
        }
        let select_now = !heldout.is_empty()
            && cfg.select_every > 0
            && (epoch % cfg.select_every == 0 || epoch == cfg.epochs);
        let heldout_l2 = if select_now {
            let mean = z.mean_axis(Axis(0)).expect("non-empty");
            let inv_w = cfg.inversion_weights();
            let mut total = 0.0;
            for t in &targets[n..] {
                let (_, l) = invert_prepared(
                    &params,
                    enc,
                    t,
                    mean.clone(),
                    cfg.select_steps,
                    cfg.invert_lr,
                    &inv_w,
                    Some(&tables),
                )?;
                total += l.l2;
            }
            Some(total / heldout.len() as f64)
        } else {
            None
        };
        if let Some(h) = heldout_l2 {
            if best.as_ref().is_none_or(|b| h < b.0) {
                best = Some((h, epoch, params.clone(), z.clone()));
            }
        }
        log::debug!("epoch {epoch}: {acc:?} heldout {heldout_l2:?}");
        records.push(EpochRecord {
            epoch,
            total: acc.total,
            l2: acc.l2,
            align: acc.align,
            pbc: acc.pbc,
            heldout_l2,
        });
    }

    let (selected_epoch, params, z) = match best {
        Some((_, e, p, z)) => (e, p, z),
        None => (cfg.epochs, params, z),
    };
    Ok(ModelCheckpoint {
        train: cfg.clone(),
        preprocess: preprocess.clone(),
        shape,
        params,
        latents: LatentTable {
            subject_ids: ids,
            z,
        },
        mmds: mmds.cloned(),
        freq_bins_hz: freq_bins,
        trace: LossTrace {
            initial_l2,
            epochs: records,
            selected_epoch,
        },
    })
}

/// Recovers a latent for an unseen subject with the weights frozen, starting
/// from the mean training latent.
pub fn invert_latent(
    ckpt: &ModelCheckpoint,
    target: &MagnitudeSet,
    steps: usize,
    lr: f64,
) -> Result<Array1<f64>> {
    Ok(invert_with_loss(ckpt, target, steps, lr)?.0)
}

pub fn invert_with_loss(
    ckpt: &ModelCheckpoint,
    target: &MagnitudeSet,
    steps: usize,
    lr: f64,
) -> Result<(Array1<f64>, LossBreakdown)> {
    invert_from(ckpt, target, ckpt.latents.mean(), steps, lr)
}

/// Inversion from an explicit starting latent.
pub fn invert_from(
    ckpt: &ModelCheckpoint,
    target: &MagnitudeSet,
    z0: Array1<f64>,
    steps: usize,
    lr: f64,
) -> Result<(Array1<f64>, LossBreakdown)> {
    ckpt.check_target(target)?;
    if z0.len() != ckpt.shape.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "starting latent of dimension {} for a model with {}",
            z0.len(),
            ckpt.shape.latent_dim
        )));
    }
    let enc = encode_grid(target.grid(), ckpt.shape.encoding);
    let tables = LoudnessTables::new(&ckpt.freq_bins_hz);
    invert_prepared(
        &ckpt.params,
        &enc,
        &target.to_f64(),
        z0,
        steps,
        lr,
        &ckpt.train.inversion_weights(),
        Some(&tables),
    )
}

/// Decoder output at every direction of `grid`, `L x K x 2`.
pub fn reconstruct_array(
    ckpt: &ModelCheckpoint,
    z: &Array1<f64>,
    grid: &SphericalGrid,
) -> Result<Array3<f64>> {
    if z.len() != ckpt.shape.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "latent of dimension {} for a model with {}",
            z.len(),
            ckpt.shape.latent_dim
        )));
    }
    let enc = encode_grid(grid, ckpt.shape.encoding);
    let c = ckpt.params.forward(enc.view(), z.view())?;
    c.mag
        .into_shape_with_order((grid.len(), ckpt.shape.num_bins, 2))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

pub fn reconstruct(
    ckpt: &ModelCheckpoint,
    subject_id: impl Into<String>,
    z: &Array1<f64>,
    grid: &SphericalGrid,
) -> Result<MagnitudeSet> {
    let data = reconstruct_array(ckpt, z, grid)?;
    let bins = ckpt.freq_bins_hz.iter().map(|&f| f as f32).collect();
    MagnitudeSet::from_f64(subject_id, grid.clone(), bins, &data)
}
