//! Implicit neural representation of HRTF magnitudes with per-subject latent
//! codes, trained by generative latent optimization.

mod adam;
mod checkpoint;
mod encoding;
mod loss;
mod model;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{
    read_checkpoint, write_checkpoint, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoding::{encode_direction, encode_grid, PosEncoding};
pub use loss::{
    align_term, backward, loss_and_grads, loss_total, Gradients, LossBreakdown, LossWeights,
    SubjectBatch,
};
pub use model::{ForwardCache, ModelParams, ModelShape, OUTPUT_FLOOR, PARAM_NAMES};
pub use train::{
    invert_from, invert_latent, invert_with_loss, reconstruct, reconstruct_array, train_glo,
    EpochRecord, LatentTable, LossFlags, LossTrace, TrainConfig, LATENT_INIT_STD,
};
