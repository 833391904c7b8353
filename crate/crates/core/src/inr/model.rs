use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::encoding::PosEncoding;

/// Lower bound applied to predicted linear magnitudes.
pub const OUTPUT_FLOOR: f64 = 1e-5;

const DB_TO_LN: f64 = std::f64::consts::LN_10 / 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub hidden: usize,
    pub encoding: PosEncoding,
    pub latent_dim: usize,
    pub num_bins: usize,
}

impl ModelShape {
    pub fn input_dim(&self) -> usize {
        self.encoding.len() + self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.num_bins
    }
}

/// Two hidden ReLU layers and a dB output head. Output index `2 * bin + ear`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

pub const PARAM_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w_out", "b_out"];

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Array2<f64>,
    pub a1: Array2<f64>,
    pub h1: Array2<f64>,
    pub a2: Array2<f64>,
    pub h2: Array2<f64>,
    pub out_db: Array2<f64>,
    /// `10^(out/20)` before the floor.
    pub raw: Array2<f64>,
    /// Floored linear magnitudes, `B x 2K`.
    pub mag: Array2<f64>,
    pub latent_dim: usize,
}

fn he_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / cols as f64).sqrt();
    let mut w = Array2::zeros((rows, cols));
    for v in w.iter_mut() {
        *v = rng.random_range(-bound..bound);
    }
    w
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl ModelParams {
    pub fn zeros(shape: &ModelShape) -> Self {
        let (h, f, o) = (shape.hidden, shape.input_dim(), shape.output_dim());
        ModelParams {
            w1: Array2::zeros((h, f)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            w_out: Array2::zeros((o, h)),
            b_out: Array1::zeros(o),
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init<R: Rng>(shape: &ModelShape, rng: &mut R) -> Self {
        let (h, f, o) = (shape.hidden, shape.input_dim(), shape.output_dim());
        ModelParams {
            w1: he_uniform(h, f, rng),
            b1: Array1::zeros(h),
            w2: he_uniform(h, h, rng),
            b2: Array1::zeros(h),
            w_out: he_uniform(o, h, rng),
            b_out: Array1::zeros(o),
        }
    }

    pub fn shape(&self, encoding: PosEncoding) -> ModelShape {
        ModelShape {
            hidden: self.w1.nrows(),
            encoding,
            latent_dim: self.w1.ncols() - encoding.len(),
            num_bins: self.w_out.nrows() / 2,
        }
    }

    pub fn check_shape(&self, shape: &ModelShape) -> Result<()> {
        let (h, f, o) = (shape.hidden, shape.input_dim(), shape.output_dim());
        let ok = self.w1.dim() == (h, f)
            && self.b1.len() == h
            && self.w2.dim() == (h, h)
            && self.b2.len() == h
            && self.w_out.dim() == (o, h)
            && self.b_out.len() == o;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "parameters w1 {:?}, w2 {:?}, w_out {:?} do not match {shape:?}",
                self.w1.dim(),
                self.w2.dim(),
                self.w_out.dim()
            )));
        }
        if self
            .slices()
            .iter()
            .any(|s| s.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        Ok(())
    }

    /// Flat views of every tensor in `PARAM_NAMES` order.
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            self.b_out.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            self.b_out.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Forward pass for `B` encoded directions sharing one latent vector.
    pub fn forward(&self, enc: ArrayView2<f64>, z: ArrayView1<f64>) -> Result<ForwardCache> {
        let e = enc.ncols();
        if e + z.len() != self.w1.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "input of {} encoded features and latent of {} does not match w1 {:?}",
                e,
                z.len(),
                self.w1.dim()
            )));
        }
        let b = enc.nrows();
        let mut x = Array2::zeros((b, self.w1.ncols()));
        x.slice_mut(s![.., ..e]).assign(&enc);
        x.slice_mut(s![.., e..])
            .assign(&z.broadcast((b, z.len())).expect("row broadcast"));
        let a1 = x.dot(&self.w1.t()) + &self.b1;
        let h1 = a1.mapv(relu);
        let a2 = h1.dot(&self.w2.t()) + &self.b2;
        let h2 = a2.mapv(relu);
        let out_db = h2.dot(&self.w_out.t()) + &self.b_out;
        let raw = out_db.mapv(|o| (o * DB_TO_LN).exp());
        let mag = raw.mapv(|r| r.max(OUTPUT_FLOOR));
        Ok(ForwardCache {
            x,
            a1,
            h1,
            a2,
            h2,
            out_db,
            raw,
            mag,
            latent_dim: z.len(),
        })
    }

    /// Reverse pass from `d loss / d mag`. Returns parameter gradients when
    /// requested and always the gradient with respect to the shared latent.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_mag: ArrayView2<f64>,
        need_param_grads: bool,
    ) -> (Option<ModelParams>, Array1<f64>) {
        let mut d_out = Array2::zeros(d_mag.raw_dim());
        ndarray::Zip::from(&mut d_out)
            .and(&d_mag)
            .and(&cache.raw)
            .for_each(|d, &g, &r| {
                *d = if r > OUTPUT_FLOOR {
                    g * r * DB_TO_LN
                } else {
                    0.0
                };
            });
        let mut d_a2 = d_out.dot(&self.w_out);
        ndarray::Zip::from(&mut d_a2)
            .and(&cache.a2)
            .for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
        let mut d_a1 = d_a2.dot(&self.w2);
        ndarray::Zip::from(&mut d_a1)
            .and(&cache.a1)
            .for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
        let latent_cols = self.w1.slice(s![.., self.w1.ncols() - cache.latent_dim..]);
        let d_z = d_a1.dot(&latent_cols).sum_axis(Axis(0));
        let grads = need_param_grads.then(|| ModelParams {
            w1: d_a1.t().dot(&cache.x),
            b1: d_a1.sum_axis(Axis(0)),
            w2: d_a2.t().dot(&cache.h1),
            b2: d_a2.sum_axis(Axis(0)),
            w_out: d_out.t().dot(&cache.h2),
            b_out: d_out.sum_axis(Axis(0)),
        });
        (grads, d_z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> ModelShape {
        ModelShape {
            hidden: 8,
            encoding: PosEncoding { num_octaves: 2 },
            latent_dim: 3,
            num_bins: 4,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, b: usize) -> (Array2<f64>, Array1<f64>) {
        let s = shape();
        let enc = Array2::from_shape_fn((b, s.encoding.len()), |_| rng.random_range(-1.0..1.0));
        let z = Array1::from_shape_fn(s.latent_dim, |_| rng.random_range(-1.0..1.0));
        (enc, z)
    }

    #[test]
    fn zero_params_give_unit_magnitude() {
        let p = ModelParams::zeros(&shape());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (enc, z) = random_input(&mut rng, 5);
        let c = p.forward(enc.view(), z.view()).unwrap();
        assert!(c.mag.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn six_db_bias_doubles_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::init(&shape(), &mut rng);
        let (enc, z) = random_input(&mut rng, 5);
        let before = p.forward(enc.view(), z.view()).unwrap().mag;
        p.b_out += 20.0 * 2f64.log10();
        let after = p.forward(enc.view(), z.view()).unwrap().mag;
        for (a, b) in after.iter().zip(before.iter()) {
            assert!((a / b - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = shape();
        let mut p = ModelParams::init(&s, &mut rng);
        p.b1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        p.b2.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        p.b_out.mapv_inplace(|_| rng.random_range(-3.0..3.0));
        let (enc, z) = random_input(&mut rng, 6);
        let c = p.forward(enc.view(), z.view()).unwrap();
        for r in 0..6 {
            let mut x: Vec<f64> = enc.row(r).to_vec();
            x.extend(z.iter());
            let layer = |w: &Array2<f64>, b: &Array1<f64>, input: &[f64], act: bool| -> Vec<f64> {
                (0..w.nrows())
                    .map(|i| {
                        let mut acc = b[i];
                        for (j, v) in input.iter().enumerate() {
                            acc += w[[i, j]] * v;
                        }
                        if act {
                            acc.max(0.0)
                        } else {
                            acc
                        }
                    })
                    .collect()
            };
            let h1 = layer(&p.w1, &p.b1, &x, true);
            let h2 = layer(&p.w2, &p.b2, &h1, true);
            let out = layer(&p.w_out, &p.b_out, &h2, false);
            for (j, o) in out.iter().enumerate() {
                let m = 10f64.powf(o / 20.0).max(OUTPUT_FLOOR);
                assert!((c.mag[[r, j]] - m).abs() <= 1e-9 * m.max(1.0));
            }
        }
    }

    #[test]
    fn rejects_mismatched_input() {
        let p = ModelParams::zeros(&shape());
        let enc = Array2::zeros((2, 8));
        assert!(p.forward(enc.view(), Array1::zeros(2).view()).is_err());
        p.check_shape(&shape()).unwrap();
        assert!(p
            .check_shape(&ModelShape {
                hidden: 9,
                ..shape()
            })
            .is_err());
    }
}
