use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{pbc_with_grad, LoudnessTables};

use super::model::ModelParams;

/// Which optional terms enter the total loss, and their weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub align: bool,
    pub pbc: bool,
}

impl LossWeights {
    pub fn l2_only() -> Self {
        LossWeights {
            alpha: 0.0,
            beta: 0.0,
            align: false,
            pbc: false,
        }
    }
}

/// Locations of one subject evaluated with one latent row.
#[derive(Debug, Clone)]
pub struct SubjectBatch {
    /// Row of the latent table.
    pub latent_row: usize,
    /// `B x E` encoded directions.
    pub enc: Array2<f64>,
    /// `B x K x 2` target magnitudes.
    pub target: Array3<f64>,
    /// MMDS coordinates of the subject, required for the alignment term.
    pub z_mds: Option<Array1<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l2: f64,
    pub align: f64,
    pub pbc: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Option<ModelParams>,
    /// `(latent_row, gradient)` in batch order.
    pub latents: Vec<(usize, Array1<f64>)>,
}

fn check_batch(
    params: &ModelParams,
    latents: &Array2<f64>,
    batch: &[SubjectBatch],
    weights: &LossWeights,
    tables: Option<&LoudnessTables>,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let k = params.w_out.nrows() / 2;
    for sb in batch {
        if sb.latent_row >= latents.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "latent row {} of {}",
                sb.latent_row,
                latents.nrows()
            )));
        }
        let (b, kk, e) = sb.target.dim();
        if b != sb.enc.nrows() || kk != k || e != 2 || b == 0 {
            return Err(Error::ShapeMismatch(format!(
                "batch of {} encodings and targets {:?} for {k} bins",
                sb.enc.nrows(),
                sb.target.dim()
            )));
        }
        if weights.align {
            match &sb.z_mds {
                Some(z) if z.len() == latents.ncols() => {}
                Some(z) => {
                    return Err(Error::ShapeMismatch(format!(
                        "MMDS target of dimension {} for latent dimension {}",
                        z.len(),
                        latents.ncols()
                    )))
                }
                None => {
                    return Err(Error::Config(
                        "alignment term needs MMDS coordinates".into(),
                    ))
                }
            }
        }
    }
    if weights.pbc && tables.is_none_or(|t| t.num_bins() != k) {
        return Err(Error::Config(
            "PBC term needs loudness tables for the model's bins".into(),
        ));
    }
    Ok(())
}

/// Loss and gradients in one pass.
///
/// `L2` is the mean squared linear-magnitude error over every element of the
/// batch, the alignment term is the mean over subjects of `||z - z_mds||`, and
/// the PBC term is the mean over subjects of `PBC(target, prediction)`.
pub fn loss_and_grads(
    params: &ModelParams,
    latents: &Array2<f64>,
    batch: &[SubjectBatch],
    weights: &LossWeights,
    tables: Option<&LoudnessTables>,
    need_param_grads: bool,
) -> Result<(LossBreakdown, Gradients)> {
    evaluate(
        params,
        latents,
        batch,
        weights,
        tables,
        Some(need_param_grads),
    )
}

/// `grads`: `None` for the loss only, `Some(false)` for latent gradients,
/// `Some(true)` for latent and parameter gradients.
fn evaluate(
    params: &ModelParams,
    latents: &Array2<f64>,
    batch: &[SubjectBatch],
    weights: &LossWeights,
    tables: Option<&LoudnessTables>,
    grads_mode: Option<bool>,
) -> Result<(LossBreakdown, Gradients)> {
    check_batch(params, latents, batch, weights, tables)?;
    let count: usize = batch.iter().map(|sb| sb.target.len()).sum();
    let subjects = batch.len() as f64;
    let mut out = LossBreakdown::default();
    let mut grads = Gradients {
        params: None,
        latents: Vec::with_capacity(batch.len()),
    };
    for sb in batch {
        let z = latents.row(sb.latent_row);
        let cache = params.forward(sb.enc.view(), z)?;
        let (b, k, _) = sb.target.dim();
        let pred = cache
            .mag
            .view()
            .into_shape_with_order((b, k, 2))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let mut d_mag = Array3::<f64>::zeros((b, k, 2));
        let scale = 2.0 / count as f64;
        ndarray::Zip::from(&mut d_mag)
            .and(&pred)
            .and(&sb.target)
            .for_each(|d, &p, &t| {
                let e = p - t;
                out.l2 += e * e;
                *d = scale * e;
            });
        if weights.pbc {
            let tables = tables.expect("checked");
            let (v, g) = pbc_with_grad(sb.target.view(), pred, tables)?;
            out.pbc += v / subjects;
            d_mag.scaled_add(weights.beta / subjects, &g);
        }
        if weights.align {
            let (a, _) = align_term(z, sb.z_mds.as_ref().expect("checked").view());
            out.align += a / subjects;
        }
        let Some(need_param_grads) = grads_mode else {
            continue;
        };
        let d_mag = d_mag
            .into_shape_with_order((b, 2 * k))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let (pg, mut dz) = params.backward(&cache, d_mag.view(), need_param_grads);
        if weights.align {
            let (_, g) = align_term(z, sb.z_mds.as_ref().expect("checked").view());
            dz.scaled_add(weights.alpha / subjects, &g);
        }
        if let Some(pg) = pg {
            match grads.params.as_mut() {
                None => grads.params = Some(pg),
                Some(acc) => {
                    for (a, g) in acc.slices_mut().into_iter().zip(pg.slices()) {
                        for (x, y) in a.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
        }
        grads.latents.push((sb.latent_row, dz));
    }
    out.l2 /= count as f64;
    out.total = out.l2;
    if weights.align {
        out.total += weights.alpha * out.align;
    }
    if weights.pbc {
        out.total += weights.beta * out.pbc;
    }
    if !out.total.is_finite() {
        return Err(Error::Numerical(format!("loss is not finite: {out:?}")));
    }
    Ok((out, grads))
}

/// `||z - z_mds||` and its gradient (zero at coincidence).
pub fn align_term(z: ArrayView1<f64>, z_mds: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let diff = &z - &z_mds;
    let n = diff.dot(&diff).sqrt();
    if n > 0.0 {
        (n, diff / n)
    } else {
        (0.0, Array1::zeros(z.len()))
    }
}

pub fn loss_total(
    params: &ModelParams,
    latents: &Array2<f64>,
    batch: &[SubjectBatch],
    weights: &LossWeights,
    tables: Option<&LoudnessTables>,
) -> Result<LossBreakdown> {
    Ok(evaluate(params, latents, batch, weights, tables, None)?.0)
}

pub fn backward(
    params: &ModelParams,
    latents: &Array2<f64>,
    batch: &[SubjectBatch],
    weights: &LossWeights,
    tables: Option<&LoudnessTables>,
) -> Result<Gradients> {
    Ok(loss_and_grads(params, latents, batch, weights, tables, true)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inr::encoding::PosEncoding;
    use crate::inr::model::ModelShape;
    use crate::metrics::pbc_arrays;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape() -> ModelShape {
        ModelShape {
            hidden: 8,
            encoding: PosEncoding { num_octaves: 1 },
            latent_dim: 3,
            num_bins: 4,
        }
    }

    fn tables() -> LoudnessTables {
        LoudnessTables::new(&[500.0, 1000.0, 2000.0, 4000.0])
    }

    fn batch(rng: &mut ChaCha8Rng, rows: &[usize]) -> Vec<SubjectBatch> {
        rows.iter()
            .map(|&r| SubjectBatch {
                latent_row: r,
                enc: Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0)),
                target: Array3::from_shape_fn((5, 4, 2), |_| rng.random_range(0.2..2.0)),
                z_mds: Some(Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0))),
            })
            .collect()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let p = ModelParams::zeros(&shape());
        let z = Array2::from_shape_fn((1, 3), |(_, c)| c as f64);
        let sb = SubjectBatch {
            latent_row: 0,
            enc: Array2::zeros((3, 4)),
            target: Array3::ones((3, 4, 2)),
            z_mds: Some(z.row(0).to_owned()),
        };
        let w = LossWeights {
            alpha: 0.3,
            beta: 0.2,
            align: true,
            pbc: true,
        };
        let (l, g) = loss_and_grads(&p, &z, &[sb], &w, Some(&tables()), true).unwrap();
        assert_eq!(l, LossBreakdown::default());
        assert!(g.latents[0].1.iter().all(|&v| v == 0.0));
        assert!(g
            .params
            .unwrap()
            .slices()
            .iter()
            .all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn flags_off_is_pure_l2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::init(&shape(), &mut rng);
        let z = Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
        let b = batch(&mut rng, &[0, 1]);
        let w = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            align: true,
            pbc: true,
        };
        let l = loss_total(&p, &z, &b, &w, Some(&tables())).unwrap();
        let base = loss_total(&p, &z, &b, &LossWeights::l2_only(), None).unwrap();
        assert_eq!(l.total, base.l2);
        assert_eq!(base.total, base.l2);
    }

    #[test]
    fn matches_compositional_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = ModelParams::init(&shape(), &mut rng);
        let z = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let b = batch(&mut rng, &[2, 0]);
        let w = LossWeights {
            alpha: 0.3,
            beta: 0.2,
            align: true,
            pbc: true,
        };
        let t = tables();
        let l = loss_total(&p, &z, &b, &w, Some(&t)).unwrap();
        let (mut sq, mut n, mut al, mut pb) = (0.0, 0usize, 0.0, 0.0);
        for sb in &b {
            let c = p.forward(sb.enc.view(), z.row(sb.latent_row)).unwrap();
            let pred = c.mag.clone().into_shape_with_order((5, 4, 2)).unwrap();
            for (a, t) in pred.iter().zip(sb.target.iter()) {
                sq += (a - t).powi(2);
                n += 1;
            }
            let d = &z.row(sb.latent_row) - sb.z_mds.as_ref().unwrap();
            al += d.dot(&d).sqrt() / 2.0;
            pb += pbc_arrays(sb.target.view(), pred.view(), &t).unwrap() / 2.0;
        }
        let expected = sq / n as f64 + 0.3 * al + 0.2 * pb;
        assert!((l.total - expected).abs() < 1e-9);
        assert!((l.align - al).abs() < 1e-12 && (l.pbc - pb).abs() < 1e-12);
    }

    #[test]
    fn align_gradient_is_unit_direction() {
        let z = Array1::from(vec![1.0, 2.0, 2.0]);
        let m = Array1::<f64>::zeros(3);
        let (v, g) = align_term(z.view(), m.view());
        assert_eq!(v, 3.0);
        assert_eq!(g, Array1::from(vec![1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]));
        assert_eq!(align_term(m.view(), m.view()).1, Array1::<f64>::zeros(3));
    }

    #[test]
    fn missing_inputs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = ModelParams::init(&shape(), &mut rng);
        let z = Array2::zeros((2, 3));
        let mut b = batch(&mut rng, &[0]);
        let pbc_only = LossWeights {
            pbc: true,
            ..LossWeights::l2_only()
        };
        assert!(loss_total(&p, &z, &b, &pbc_only, None).is_err());
        b[0].z_mds = None;
        let align = LossWeights {
            align: true,
            ..LossWeights::l2_only()
        };
        assert!(loss_total(&p, &z, &b, &align, None).is_err());
        assert!(loss_total(&p, &z, &[], &LossWeights::l2_only(), None).is_err());
    }
}
