//! Anchored correlation, reconstruction error and personalization selection.

mod report;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use report::{canonical_json, emit_report, to_value, version_string, write_report, Report};

use crate::data::MagnitudeSet;
use crate::dsp::{sde, sde_db, to_db};
use crate::error::{Error, Result};
use crate::inr::{invert_latent, reconstruct_array, LatentTable, ModelCheckpoint};
use crate::metrics::{pbc_arrays, DistanceMatrix, LoudnessTables, Metric};
use crate::stats::{mean, pearson, std_pop};

/// Minimum number of targets per anchor.
pub const MIN_TARGETS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric_name: String,
    /// `train` or `test`.
    pub partition: String,
    /// `gt` or `reconstructed`.
    pub target_label: String,
    pub anchors: Vec<String>,
    pub rho: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn euclidean(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt()
}

/// For each anchor, the Pearson correlation between latent distances and
/// metric distances to every target other than the anchor itself.
pub fn anchored_correlation(
    anchors: &LatentTable,
    targets: &LatentTable,
    m: &DistanceMatrix,
    partition: &str,
    target_label: &str,
) -> Result<CorrelationReport> {
    if anchors.subject_ids.is_empty() {
        return Err(Error::Config("no anchor subjects".into()));
    }
    let mut rho = Vec::with_capacity(anchors.subject_ids.len());
    for (i, aid) in anchors.subject_ids.iter().enumerate() {
        let za = anchors.z.row(i).to_owned();
        let (mut lat, mut per) = (Vec::new(), Vec::new());
        for (j, tid) in targets.subject_ids.iter().enumerate() {
            if tid == aid {
                continue;
            }
            lat.push(euclidean(&za, &targets.z.row(j).to_owned()));
            per.push(m.get(aid, tid)?);
        }
        if lat.len() < MIN_TARGETS {
            return Err(Error::Config(format!(
                "anchor {aid} has {} targets, need at least {MIN_TARGETS}",
                lat.len()
            )));
        }
        rho.push(pearson(&lat, &per).map_err(|e| match e {
            Error::DegenerateSeries(msg) => Error::DegenerateSeries(format!("anchor {aid}: {msg}")),
            other => other,
        })?);
    }
    Ok(CorrelationReport {
        metric_name: m.metric_name().to_owned(),
        partition: partition.to_owned(),
        target_label: target_label.to_owned(),
        anchors: anchors.subject_ids.clone(),
        mean: mean(&rho),
        std: std_pop(&rho),
        rho,
    })
}

/// Latents for `sets`: table rows for subjects seen in training, inversion for
/// the rest.
pub fn infer_latents(
    ckpt: &ModelCheckpoint,
    sets: &[MagnitudeSet],
    steps: usize,
    lr: f64,
) -> Result<LatentTable> {
    let d = ckpt.shape.latent_dim;
    let mut z = Array2::zeros((sets.len(), d));
    for (i, s) in sets.iter().enumerate() {
        let row = match ckpt.latents.index_of(s.subject_id()) {
            Some(r) => ckpt.latents.z.row(r).to_owned(),
            None => invert_latent(ckpt, s, steps, lr)?,
        };
        z.row_mut(i).assign(&row);
    }
    Ok(LatentTable {
        subject_ids: sets.iter().map(|s| s.subject_id().to_owned()).collect(),
        z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReconstruction {
    pub subject_id: String,
    pub sde_db: f64,
    pub pbc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub partition: String,
    pub subjects: Vec<SubjectReconstruction>,
    pub mean_sde_db: f64,
    pub mean_pbc: f64,
}

/// SDE and PBC between each subject's ground truth and its reconstruction from
/// the latent in `latents`.
pub fn reconstruction_report(
    ckpt: &ModelCheckpoint,
    sets: &[MagnitudeSet],
    latents: &LatentTable,
    partition: &str,
) -> Result<ReconstructionReport> {
    if sets.is_empty() {
        return Err(Error::Config(
            "reconstruction report over no subjects".into(),
        ));
    }
    let tables = LoudnessTables::new(&ckpt.freq_bins_hz);
    let mut subjects = Vec::with_capacity(sets.len());
    for s in sets {
        ckpt.check_target(s)?;
        let z = latents.row(s.subject_id())?;
        let rec = reconstruct_array(ckpt, &z, s.grid())?;
        let gt = s.to_f64();
        subjects.push(SubjectReconstruction {
            subject_id: s.subject_id().to_owned(),
            sde_db: sde_db(&to_db(&gt)?, &to_db(&rec)?),
            pbc: pbc_arrays(gt.view(), rec.view(), &tables)?,
        });
    }
    let sde: Vec<f64> = subjects.iter().map(|r| r.sde_db).collect();
    let pbc: Vec<f64> = subjects.iter().map(|r| r.pbc).collect();
    Ok(ReconstructionReport {
        partition: partition.to_owned(),
        mean_sde_db: mean(&sde),
        mean_pbc: mean(&pbc),
        subjects,
    })
}

/// Pool ids ranked by latent distance to `z`, ascending, ties by id.
pub fn rank_pool(z: &Array1<f64>, pool: &LatentTable) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = pool
        .subject_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), euclidean(z, &pool.z.row(i).to_owned())))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// The `k` pool subjects whose latents lie nearest the inverted latent of `test`.
pub fn personalization_select(
    ckpt: &ModelCheckpoint,
    test: &MagnitudeSet,
    pool: &[String],
    k: usize,
    steps: usize,
    lr: f64,
) -> Result<Vec<String>> {
    if pool.is_empty() {
        return Err(Error::Config("empty selection pool".into()));
    }
    if k == 0 || k > pool.len() {
        return Err(Error::Config(format!(
            "k = {k} for a pool of {}",
            pool.len()
        )));
    }
    let z = invert_latent(ckpt, test, steps, lr)?;
    let rows = pool
        .iter()
        .map(|id| ckpt.latents.row(id))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Array2::zeros((pool.len(), ckpt.shape.latent_dim));
    for (i, r) in rows.iter().enumerate() {
        table.row_mut(i).assign(r);
    }
    let ranked = rank_pool(
        &z,
        &LatentTable {
            subject_ids: pool.to_vec(),
            z: table,
        },
    );
    Ok(ranked.into_iter().take(k).map(|(id, _)| id).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub test_id: String,
    pub selected: Vec<String>,
    pub best_metric: f64,
    pub best_sde_db: f64,
    pub topk_metric: f64,
    pub topk_sde_db: f64,
}

/// Metric and SDE between the test ground truth and each selected ground
/// truth: the first candidate alone and the mean over all of them.
pub fn score_selection(
    test: &MagnitudeSet,
    selected: &[&MagnitudeSet],
    metric: Metric,
) -> Result<SelectionScore> {
    if selected.is_empty() {
        return Err(Error::Config("no selected candidates".into()));
    }
    let mut m = Vec::with_capacity(selected.len());
    let mut s = Vec::with_capacity(selected.len());
    for c in selected {
        m.push(metric.evaluate(c, test)?);
        s.push(sde(test, c)?);
    }
    Ok(SelectionScore {
        test_id: test.subject_id().to_owned(),
        selected: selected.iter().map(|c| c.subject_id().to_owned()).collect(),
        best_metric: m[0],
        best_sde_db: s[0],
        topk_metric: mean(&m),
        topk_sde_db: mean(&s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(ids: &[&str], z: Array2<f64>) -> LatentTable {
        LatentTable {
            subject_ids: ids.iter().map(|s| s.to_string()).collect(),
            z,
        }
    }

    fn latent_distance_matrix(t: &LatentTable) -> DistanceMatrix {
        let n = t.subject_ids.len();
        let mut v = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    v[[i, j]] = euclidean(&t.z.row(i).to_owned(), &t.z.row(j).to_owned());
                }
            }
        }
        DistanceMatrix::new(t.subject_ids.clone(), v, "latent").unwrap()
    }

    #[test]
    fn exact_latent_distances_correlate_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = table(
            &["a", "b", "c", "d", "e", "f"],
            Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0)),
        );
        let m = latent_distance_matrix(&t);
        let r = anchored_correlation(&t, &t, &m, "train", "gt").unwrap();
        assert!((r.mean - 1.0).abs() < 1e-12);
        assert!(r.std < 1e-12);
        assert_eq!(r.rho.len(), 6);
    }

    #[test]
    fn equal_distances_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids = ["a", "b", "c", "d", "e"];
        let t = table(
            &ids,
            Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0)),
        );
        let v = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let m = DistanceMatrix::new(t.subject_ids.clone(), v, "flat").unwrap();
        assert!(matches!(
            anchored_correlation(&t, &t, &m, "train", "gt"),
            Err(Error::DegenerateSeries(_))
        ));
    }

    #[test]
    fn matches_brute_force_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids = ["s1", "s2", "s3", "s4", "s5"];
        let t = table(
            &ids,
            Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0)),
        );
        let mut v = Array2::zeros((5, 5));
        for i in 0..5 {
            for j in i + 1..5 {
                let x = rng.random_range(0.1..3.0);
                v[[i, j]] = x;
                v[[j, i]] = x;
            }
        }
        let m = DistanceMatrix::new(t.subject_ids.clone(), v.clone(), "pbc").unwrap();
        let r = anchored_correlation(&t, &t, &m, "train", "gt").unwrap();
        for i in 0..5 {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for j in 0..5 {
                if j != i {
                    let d = &t.z.row(i) - &t.z.row(j);
                    a.push(d.dot(&d).sqrt());
                    b.push(v[[i, j]]);
                }
            }
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - ma) * (y - mb))
                .sum::<f64>()
                / n;
            let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
            let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n).sqrt();
            assert!((r.rho[i] - cov / (sa * sb)).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_targets() {
        let t = table(
            &["a", "b", "c"],
            Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64),
        );
        let m = latent_distance_matrix(&t);
        assert!(anchored_correlation(&t, &t, &m, "train", "gt").is_err());
    }

    #[test]
    fn ranking_matches_brute_force_and_breaks_ties_by_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let ids: Vec<String> = (0..9).map(|i| format!("p{}", (i * 7) % 9)).collect();
            let z = Array2::from_shape_fn((9, 3), |_| rng.random_range(-2..=2) as f64);
            let pool = LatentTable {
                subject_ids: ids.clone(),
                z: z.clone(),
            };
            let q = Array1::from_shape_fn(3, |_| rng.random_range(-2..=2) as f64);
            let ranked = rank_pool(&q, &pool);
            // brute force: repeatedly pick the smallest (distance, id)
            let mut left: Vec<usize> = (0..9).collect();
            let mut expected = Vec::new();
            while !left.is_empty() {
                let mut best = 0;
                for p in 1..left.len() {
                    let (i, b) = (left[p], left[best]);
                    let di = euclidean(&q, &z.row(i).to_owned());
                    let db = euclidean(&q, &z.row(b).to_owned());
                    if di < db || (di == db && ids[i] < ids[b]) {
                        best = p;
                    }
                }
                expected.push(ids[left.remove(best)].clone());
            }
            let got: Vec<String> = ranked.iter().map(|r| r.0.clone()).collect();
            assert_eq!(got, expected);
            // argsort is unchanged by a strictly increasing transform of the distances
            let mut squared = ranked.clone();
            for r in &mut squared {
                r.1 = r.1 * r.1 + 1.0;
            }
            squared.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            assert_eq!(
                squared.iter().map(|r| &r.0).collect::<Vec<_>>(),
                got.iter().collect::<Vec<_>>()
            );
        }
    }
}
