//! End-to-end experiment helpers shared by the command-line tool and the
//! acceptance tests: synthetic datasets, the desk preset and one training
//! configuration from MMDS to evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{synth_subject, MagnitudeSet, SphericalGrid, Split};
use crate::dsp::{retained_bins, PreprocessConfig};
use crate::error::{Error, Result};
use crate::eval::{
    anchored_correlation, reconstruction_report, CorrelationReport, ReconstructionReport,
};
use crate::inr::{train_glo, LossFlags, ModelCheckpoint, TrainConfig};
use crate::metrics::{pairwise_matrix, DistanceMatrix, Metric};
use crate::mmds::{embed, MmdsEmbedding};

/// Sample rate assumed for synthetic subjects.
pub const SYNTH_SAMPLE_RATE_HZ: f64 = 48000.0;
pub const TEST_FRACTION: f64 = 0.2;

/// Frequency bins of the default preprocessing at 48 kHz.
pub fn default_bins() -> Vec<f32> {
    retained_bins(SYNTH_SAMPLE_RATE_HZ, &PreprocessConfig::default())
        .iter()
        .map(|&f| f as f32)
        .collect()
}

/// Seeded 80/20 split. Both lists come back sorted.
pub fn split_ids(ids: &[String], seed: u64) -> Result<Split> {
    if ids.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 subjects, got {}",
            ids.len()
        )));
    }
    let n_test = ((ids.len() as f64 * TEST_FRACTION).round() as usize).clamp(1, ids.len() - 1);
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = shuffled[..n_test].to_vec();
    let mut train = shuffled[n_test..].to_vec();
    test.sort();
    train.sort();
    Ok(Split { train, test })
}

/// `n` synthetic subjects whose generator seeds come from one stream.
pub fn synth_population(
    n: usize,
    grid: &SphericalGrid,
    bins: &[f32],
    seed: u64,
) -> Result<Vec<MagnitudeSet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds: Vec<u64> = Vec::with_capacity(n);
    while seeds.len() < n {
        let s = rng.random_range(0..10_000u64);
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    seeds.sort_unstable();
    seeds
        .iter()
        .map(|&s| synth_subject(s, grid, bins))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<MagnitudeSet>,
    pub test: Vec<MagnitudeSet>,
}

impl Dataset {
    pub fn synthetic(n: usize, grid: &SphericalGrid, seed: u64) -> Result<Self> {
        let all = synth_population(n, grid, &default_bins(), seed)?;
        let ids: Vec<String> = all.iter().map(|s| s.subject_id().to_owned()).collect();
        let split = split_ids(&ids, seed)?;
        let pick = |wanted: &[String]| -> Vec<MagnitudeSet> {
            all.iter()
                .filter(|s| wanted.iter().any(|w| w == s.subject_id()))
                .cloned()
                .collect()
        };
        Ok(Dataset {
            train: pick(&split.train),
            test: pick(&split.test),
        })
    }
}

/// Desk-scale experiment sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preset {
    pub n_subjects: usize,
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub data_seed: u64,
    pub train: TrainConfig,
}

impl Default for Preset {
    fn default() -> Self {
        Self::desk()
    }
}

impl Preset {
    /// 20 subjects on 72 directions, 16-dimensional latents, 100 epochs.
    pub fn desk() -> Self {
        Preset {
            n_subjects: 20,
            n_azimuth: 12,
            n_elevation: 6,
            data_seed: 1,
            train: TrainConfig {
                latent_dim: 16,
                epochs: 100,
                hidden: 256,
                lr_weights: 3e-3,
                lr_latents: 1e-2,
                lr_final_fraction: 0.02,
                select_every: 0,
                ..TrainConfig::default()
            },
        }
    }

    pub fn grid(&self) -> Result<SphericalGrid> {
        SphericalGrid::equiangular(self.n_azimuth, self.n_elevation)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::synthetic(self.n_subjects, &self.grid()?, self.data_seed)
    }

    pub fn train_config(&self, flags: LossFlags, seed: u64) -> TrainConfig {
        TrainConfig {
            loss_flags: flags,
            seed,
            ..self.train.clone()
        }
    }
}

/// The four loss configurations in ablation order.
pub const ABLATION: [LossFlags; 4] = [
    LossFlags {
        align: false,
        pbc: false,
    },
    LossFlags {
        align: true,
        pbc: false,
    },
    LossFlags {
        align: false,
        pbc: true,
    },
    LossFlags {
        align: true,
        pbc: true,
    },
];

/// Train-partition PBC matrix and its MMDS embedding at `dim`.
pub fn perceptual_space(
    train: &[MagnitudeSet],
    dim: usize,
) -> Result<(DistanceMatrix, MmdsEmbedding)> {
    let m = pairwise_matrix(train, Metric::Pbc)?;
    let e = embed(&m, dim)?;
    Ok((m, e))
}

#[derive(Debug, Clone)]
pub struct ConfigRun {
    pub checkpoint: ModelCheckpoint,
    /// Anchored correlation of the training latents against the PBC matrix.
    pub train_gt: CorrelationReport,
    pub train_recon: ReconstructionReport,
}

/// Trains one configuration and evaluates it on the training partition.
pub fn run_config(
    data: &Dataset,
    pbc: &DistanceMatrix,
    mmds: &MmdsEmbedding,
    cfg: &TrainConfig,
) -> Result<ConfigRun> {
    let checkpoint = train_glo(
        &data.train,
        &[],
        Some(mmds),
        cfg,
        &PreprocessConfig::default(),
    )?;
    let train_gt =
        anchored_correlation(&checkpoint.latents, &checkpoint.latents, pbc, "train", "gt")?;
    let train_recon =
        reconstruction_report(&checkpoint, &data.train, &checkpoint.latents, "train")?;
    Ok(ConfigRun {
        checkpoint,
        train_gt,
        train_recon,
    })
}
