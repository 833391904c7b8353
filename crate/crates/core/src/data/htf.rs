//! HTF container: a small little-endian binary format for HRIR and magnitude sets.
//!
//! ```text
//! "HTF1" | u32 version=1 | u8 domain (0 = HRIR, 1 = magnitude)
//! u32 id_len | id bytes (UTF-8) | f32 sample_rate_hz | u32 L | u32 T_or_K
//! L x (f32 azimuth_deg, f32 elevation_deg)
//! [magnitude only] K x f32 bin frequency
//! L x 2 x T_or_K f32 (location, ear, sample/bin)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array3;

use super::sets::{Direction, HrirSet, HtfSet, MagnitudeSet, SphericalGrid};
use crate::error::{Error, Result};

pub const HTF_MAGIC: [u8; 4] = *b"HTF1";
pub const HTF_VERSION: u32 = 1;

const DOMAIN_HRIR: u8 = 0;
const DOMAIN_MAGNITUDE: u8 = 1;

/// Encodes a set to bytes. Validates invariants first.
pub fn encode_htf(set: &HtfSet) -> Result<Vec<u8>> {
    let (domain, id, fs, grid, width) = match set {
        HtfSet::Hrir(h) => {
            h.validate()?;
            (
                DOMAIN_HRIR,
                h.subject_id(),
                h.sample_rate_hz(),
                h.grid(),
                h.taps(),
            )
        }
        HtfSet::Magnitude(m) => {
            m.validate()?;
            (
                DOMAIN_MAGNITUDE,
                m.subject_id(),
                0.0,
                m.grid(),
                m.num_bins(),
            )
        }
    };
    let l = grid.len();
    let mut out = Vec::with_capacity(25 + id.len() + 8 * l + 4 * width + 8 * l * width);
    out.extend_from_slice(&HTF_MAGIC);
    out.extend_from_slice(&HTF_VERSION.to_le_bytes());
    out.push(domain);
    out.extend_from_slice(&u32_len(id.len())?.to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out.extend_from_slice(&fs.to_le_bytes());
    out.extend_from_slice(&u32_len(l)?.to_le_bytes());
    out.extend_from_slice(&u32_len(width)?.to_le_bytes());
    for d in grid.directions() {
        out.extend_from_slice(&d.azimuth_deg.to_le_bytes());
        out.extend_from_slice(&d.elevation_deg.to_le_bytes());
    }
    match set {
        HtfSet::Hrir(h) => {
            // in-memory layout already matches (location, ear, tap)
            for v in h.data().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        HtfSet::Magnitude(m) => {
            for f in m.freq_bins_hz() {
                out.extend_from_slice(&f.to_le_bytes());
            }
            let data = m.data();
            for loc in 0..l {
                for ear in 0..2 {
                    for k in 0..width {
                        out.extend_from_slice(&data[[loc, k, ear]].to_le_bytes());
                    }
                }
            }
        }
    }
    Ok(out)
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Invariant(format!("length {n} exceeds u32")))
}

pub fn write_htf(set: &HtfSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_htf(set)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_htf(path: impl AsRef<Path>) -> Result<HtfSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_htf(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::TruncatedPayload {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| overflow(n))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn overflow(n: usize) -> Error {
    Error::Format(format!("declared size {n} overflows"))
}

pub fn decode_htf(bytes: &[u8]) -> Result<HtfSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != HTF_MAGIC {
        return Err(Error::BadMagic {
            expected: HTF_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != HTF_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let domain = r.u8()?;
    if domain != DOMAIN_HRIR && domain != DOMAIN_MAGNITUDE {
        return Err(Error::Format(format!("unknown domain flag {domain}")));
    }
    let id_len = r.u32()? as usize;
    let id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|e| Error::Format(format!("subject id is not UTF-8: {e}")))?
        .to_owned();
    let fs = r.f32()?;
    let l = r.u32()? as usize;
    let width = r.u32()? as usize;
    let angles = r.f32_vec(l.checked_mul(2).ok_or_else(|| overflow(l))?)?;
    let grid = SphericalGrid::new(
        angles
            .chunks_exact(2)
            .map(|c| Direction::new(c[0], c[1]))
            .collect(),
    )?;
    let bins = if domain == DOMAIN_MAGNITUDE {
        Some(r.f32_vec(width)?)
    } else {
        None
    };
    let count = l
        .checked_mul(2)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| overflow(l))?;
    let payload = r.f32_vec(count)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after data block",
            bytes.len() - r.pos
        )));
    }
    let raw =
        Array3::from_shape_vec((l, 2, width), payload).map_err(|e| Error::Format(e.to_string()))?;
    match bins {
        None => Ok(HtfSet::Hrir(HrirSet::new(id, fs, grid, raw)?)),
        Some(bins) => {
            let data = raw.permuted_axes([0, 2, 1]).as_standard_layout().to_owned();
            Ok(HtfSet::Magnitude(MagnitudeSet::new(id, grid, bins, data)?))
        }
    }
}

/// Size in bytes of an encoded set, from the format definition.
pub fn encoded_len(id_len: usize, locations: usize, width: usize, magnitude: bool) -> usize {
    let header = 4 + 4 + 1 + 4 + id_len + 4 + 4 + 4;
    let bins = if magnitude { 4 * width } else { 0 };
    header + 8 * locations + bins + 4 * locations * 2 * width
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hrir(l_az: usize, taps: usize) -> HrirSet {
        let grid = SphericalGrid::equiangular(l_az, 1).unwrap();
        let data = Array3::from_shape_fn((l_az, 2, taps), |(a, b, c)| {
            (a as f32 * 0.5 - b as f32) * (c as f32 + 1.0).recip()
        });
        HrirSet::new("subj-α", 48000.0, grid, data).unwrap()
    }

    #[test]
    fn hrir_round_trip() {
        let set: HtfSet = hrir(4, 8).into();
        let bytes = encode_htf(&set).unwrap();
        let back = decode_htf(&bytes).unwrap();
        assert_eq!(back, set);
        assert_eq!(encode_htf(&back).unwrap(), bytes);
    }

    #[test]
    fn file_size_matches_layout() {
        let set: HtfSet = hrir(1625, 256).into();
        let bytes = encode_htf(&set).unwrap();
        let id_len = "subj-α".len();
        assert_eq!(bytes.len(), encoded_len(id_len, 1625, 256, false));
        assert_eq!(bytes.len(), 25 + id_len + 1625 * 8 + 1625 * 2 * 256 * 4);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_htf(&hrir(2, 2).into()).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_htf(&bad), Err(Error::BadMagic { .. })));
        bytes[4] = 2;
        assert!(matches!(
            decode_htf(&bytes),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_htf(&hrir(4, 8).into()).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(
            decode_htf(cut),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn invariant_violation_on_load() {
        let grid = SphericalGrid::equiangular(2, 1).unwrap();
        let set = MagnitudeSet::new(
            "m",
            grid,
            vec![100.0, 200.0],
            Array3::from_elem((2, 2, 2), 0.5),
        )
        .unwrap();
        let mut bytes = encode_htf(&set.into()).unwrap();
        // last f32 of the data block becomes 0
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&0f32.to_le_bytes());
        assert!(matches!(
            decode_htf(&bytes),
            Err(Error::NonPositiveMagnitude { .. })
        ));
    }

    #[test]
    fn magnitude_layout_is_ear_major_on_disk() {
        let grid = SphericalGrid::equiangular(1, 1).unwrap();
        let data = Array3::from_shape_vec((1, 3, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let set = MagnitudeSet::new("m", grid, vec![1.0, 2.0, 3.0], data).unwrap();
        let bytes = encode_htf(&set.into()).unwrap();
        let tail: Vec<f32> = bytes[bytes.len() - 24..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(tail, vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }

    proptest! {
        #[test]
        fn magnitude_round_trip_is_bit_identical(
            l in 1usize..6,
            k in 1usize..9,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let grid = SphericalGrid::new(
                (0..l).map(|i| Direction::new(i as f32 * 17.5, rng.random_range(-90.0..=90.0))).collect(),
            ).unwrap();
            let bins: Vec<f32> = (0..k).map(|i| 200.0 + 150.0 * i as f32).collect();
            let data = Array3::from_shape_fn((l, k, 2), |_| rng.random_range(1e-5f32..4.0));
            let set: HtfSet = MagnitudeSet::new("p", grid, bins, data).unwrap().into();
            let back = decode_htf(&encode_htf(&set).unwrap()).unwrap();
            prop_assert_eq!(back, set);
        }
    }
}
