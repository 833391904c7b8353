//! HRTF containers, the HTF file format, dataset manifests and the synthetic
//! subject generator.

mod coords;
mod htf;
mod manifest;
mod sets;
mod synth;

pub(crate) use coords::{cos_deg, sin_deg};
pub use coords::{interaural_coords, wrap_angle_diff};
pub use htf::{decode_htf, encode_htf, encoded_len, read_htf, write_htf, HTF_MAGIC, HTF_VERSION};
pub use manifest::{
    read_manifest, write_manifest, DatasetManifest, LoadedManifest, Split, SubjectEntry,
};
pub use sets::{Direction, HrirSet, HtfSet, MagnitudeSet, SphericalGrid};
pub use synth::{synth_subject, synth_with_params, SynthParams, SYNTH_FLOOR};
