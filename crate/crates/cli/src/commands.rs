use std::path::{Path, PathBuf};

use hrtf_percept::data::{
    read_htf, read_manifest, write_htf, write_manifest, DatasetManifest, HtfSet, LoadedManifest,
    MagnitudeSet, SphericalGrid, SubjectEntry,
};
use hrtf_percept::dsp::{fft_magnitude, PreprocessConfig};
use hrtf_percept::eval::{
    anchored_correlation, infer_latents, personalization_select, reconstruction_report,
    score_selection, write_report, CorrelationReport, Report, SelectionScore,
};
use hrtf_percept::inr::{
    invert_with_loss, read_checkpoint, reconstruct, train_glo, write_checkpoint, LatentTable,
    LossFlags, ModelCheckpoint,
};
use hrtf_percept::metrics::{load_matrix, pairwise_matrix, store_matrix, DistanceMatrix, Metric};
use hrtf_percept::mmds::{embed, load_embedding, store_embedding};
use hrtf_percept::pipeline::{default_bins, split_ids, synth_population};
use hrtf_percept::stats::mean;
use hrtf_percept::{Error, Result};
use serde::Serialize;

use crate::artifacts::{Artifact, RunDir};
use crate::config::RunConfig;

const INVERSION_NOTE: &str =
    "test latents come from inversion with frozen weights; the inversion objective is L2 (plus PBC for models trained with it) and never includes alignment";

pub struct Ctx {
    pub run: RunDir,
    pub cfg: RunConfig,
    pub seed: Option<u64>,
}

impl Ctx {
    fn record(&self, path: &Path, command: &str, kind: &str) -> Result<()> {
        self.run.record(
            path,
            Artifact {
                command: command.to_owned(),
                kind: kind.to_owned(),
                seed: self.seed,
                config: self.cfg.to_json(),
            },
        )
    }

    fn default_manifest(&self) -> PathBuf {
        self.run.root.join("data").join("manifest.json")
    }

    fn report(&self, command: &str) -> Report {
        let mut r = Report::new(command, self.cfg.to_json()).seed("data", self.cfg.data.seed);
        if let Some(s) = self.seed {
            r = r.seed("run", s);
        }
        r
    }
}

/// Loads subjects from a manifest, converting time-domain files with the
/// configured preprocessing.
pub fn load_subjects(
    m: &LoadedManifest,
    ids: &[String],
    pre: &PreprocessConfig,
) -> Result<Vec<MagnitudeSet>> {
    ids.iter()
        .map(|id| {
            let set = match read_htf(m.manifest.path_of(&m.base_dir, id)?)? {
                HtfSet::Magnitude(s) => s,
                HtfSet::Hrir(h) => fft_magnitude(&h, pre)?,
            };
            if set.subject_id() != id {
                return Err(Error::Invariant(format!(
                    "file for {id} holds subject {}",
                    set.subject_id()
                )));
            }
            Ok(set)
        })
        .collect()
}

fn read_subject(path: &Path, pre: &PreprocessConfig) -> Result<MagnitudeSet> {
    match read_htf(path)? {
        HtfSet::Magnitude(s) => Ok(s),
        HtfSet::Hrir(h) => fft_magnitude(&h, pre),
    }
}

pub fn gen_data(ctx: &Ctx, out_dir: Option<PathBuf>) -> Result<PathBuf> {
    let d = &ctx.cfg.data;
    let seed = ctx.seed.unwrap_or(d.seed);
    let grid = SphericalGrid::equiangular(d.n_azimuth, d.n_elevation)?;
    let subjects = synth_population(d.n_subjects, &grid, &default_bins(), seed)?;
    let dir = match out_dir {
        Some(p) => p,
        None => ctx.run.root.join("data"),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(subjects.len());
    for s in subjects {
        let name = format!("{}.htf", s.subject_id());
        let path = dir.join(&name);
        let id = s.subject_id().to_owned();
        write_htf(&HtfSet::Magnitude(s), &path)?;
        ctx.record(&path, "gen-data", "htf")?;
        entries.push(SubjectEntry {
            id,
            path: name.into(),
        });
    }
    let ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
    let manifest = DatasetManifest {
        name: format!("synthetic-seed{seed}"),
        subjects: entries,
        split: split_ids(&ids, seed)?,
    };
    let path = dir.join("manifest.json");
    write_manifest(&manifest, &path)?;
    ctx.record(&path, "gen-data", "manifest")?;
    Ok(path)
}

pub fn metrics(
    ctx: &Ctx,
    manifest: Option<PathBuf>,
    metric: Metric,
    include_test: bool,
    out: Option<PathBuf>,
) -> Result<PathBuf> {
    let m = read_manifest(manifest.unwrap_or_else(|| ctx.default_manifest()))?;
    let mut ids = m.manifest.split.train.clone();
    if include_test {
        ids.extend(m.manifest.split.test.iter().cloned());
    }
    let sets = load_subjects(&m, &ids, &ctx.cfg.preprocess)?;
    let matrix = pairwise_matrix(&sets, metric)?;
    let path = match out {
        Some(p) => p,
        None => ctx.run.path(format!("matrices/{}.csv", metric.label()))?,
    };
    store_matrix(&matrix, &path)?;
    ctx.record(&path, "metrics", "matrix")?;
    Ok(path)
}

pub fn mmds(ctx: &Ctx, matrix: &Path, dim: Option<usize>, out: Option<PathBuf>) -> Result<PathBuf> {
    let m = load_matrix(matrix)?;
    let dim = dim.unwrap_or(ctx.cfg.train.latent_dim);
    let e = embed(&m, dim)?;
    log::info!(
        "MMDS of {} at D = {dim}: fidelity {:.4}",
        m.metric_name(),
        e.fidelity
    );
    let path = match out {
        Some(p) => p,
        None => ctx
            .run
            .path(format!("mmds/{}-d{dim}.csv", m.metric_name()))?,
    };
    store_embedding(&e, &path)?;
    ctx.record(&path, "mmds", "embedding")?;
    Ok(path)
}

pub fn train(
    ctx: &Ctx,
    manifest: Option<PathBuf>,
    mmds_path: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<PathBuf> {
    let seed = ctx
        .seed
        .ok_or_else(|| Error::Config("train requires --seed".into()))?;
    let mut cfg = ctx.cfg.train.clone();
    cfg.seed = seed;
    let m = read_manifest(manifest.unwrap_or_else(|| ctx.default_manifest()))?;
    let train = load_subjects(&m, &m.manifest.split.train, &ctx.cfg.preprocess)?;
    // held-out selection runs on the test split only when asked for
    let heldout = if cfg.select_every > 0 {
        log::warn!("held-out model selection uses the test split");
        load_subjects(&m, &m.manifest.split.test, &ctx.cfg.preprocess)?
    } else {
        Vec::new()
    };
    let embedding = match mmds_path {
        Some(p) => Some(load_embedding(p)?),
        None if cfg.loss_flags.align => {
            return Err(Error::Config("the align loss needs --mmds".into()));
        }
        None => None,
    };
    let ckpt = train_glo(
        &train,
        &heldout,
        embedding.as_ref(),
        &cfg,
        &ctx.cfg.preprocess,
    )?;
    let path = match out {
        Some(p) => p,
        None => ctx.run.path(format!(
            "checkpoints/{}-seed{seed}.phck",
            cfg.loss_flags.label()
        ))?,
    };
    write_checkpoint(&ckpt, &path)?;
    ctx.record(&path, "train", "checkpoint")?;
    Ok(path)
}

#[derive(Serialize)]
struct LatentOut {
    subject_id: String,
    z: Vec<f64>,
    l2: f64,
    pbc: f64,
    steps: usize,
    lr: f64,
}

pub fn invert(
    ctx: &Ctx,
    checkpoint: &Path,
    subject: &Path,
    out: Option<PathBuf>,
) -> Result<PathBuf> {
    ctx.seed
        .ok_or_else(|| Error::Config("invert requires --seed".into()))?;
    let ckpt = read_checkpoint(checkpoint)?;
    let target = read_subject(subject, &ckpt.preprocess)?;
    let (steps, lr) = (ckpt.train.invert_steps, ckpt.train.invert_lr);
    let (z, loss) = invert_with_loss(&ckpt, &target, steps, lr)?;
    let latent = LatentOut {
        subject_id: target.subject_id().to_owned(),
        z: z.to_vec(),
        l2: loss.l2,
        pbc: loss.pbc,
        steps,
        lr,
    };
    let report = ctx
        .report("invert")
        .note(INVERSION_NOTE)
        .table("checkpoint_train_config", &ckpt.train)?
        .table("latent", &latent)?;
    let path = match out {
        Some(p) => p,
        None => ctx
            .run
            .path(format!("latents/{}.json", target.subject_id()))?,
    };
    write_report(&report, &path)?;
    ctx.record(&path, "invert", "latent")?;
    Ok(path)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn reconstructions(
    ckpt: &ModelCheckpoint,
    sets: &[MagnitudeSet],
    latents: &LatentTable,
) -> Result<Vec<MagnitudeSet>> {
    sets.iter()
        .map(|s| {
            reconstruct(
                ckpt,
                s.subject_id(),
                &latents.row(s.subject_id())?,
                s.grid(),
            )
        })
        .collect()
}

fn has_all(m: &DistanceMatrix, sets: &[MagnitudeSet]) -> bool {
    sets.iter().all(|s| m.index_of(s.subject_id()).is_some())
}

pub fn eval(
    ctx: &Ctx,
    checkpoints: &[PathBuf],
    manifest: Option<PathBuf>,
    matrices: &[PathBuf],
    out: Option<PathBuf>,
) -> Result<PathBuf> {
    if checkpoints.is_empty() {
        return Err(Error::Config("eval needs at least one --checkpoint".into()));
    }
    let m = read_manifest(manifest.unwrap_or_else(|| ctx.default_manifest()))?;
    let train = load_subjects(&m, &m.manifest.split.train, &ctx.cfg.preprocess)?;
    let test = load_subjects(&m, &m.manifest.split.test, &ctx.cfg.preprocess)?;
    let all: Vec<MagnitudeSet> = train.iter().chain(&test).cloned().collect();
    let given: Vec<DistanceMatrix> = matrices.iter().map(load_matrix).collect::<Result<_>>()?;

    let mut report = ctx.report("eval").note(INVERSION_NOTE);
    let mut gt = Vec::new();
    for &metric in &ctx.cfg.metrics {
        let found = given.iter().find(|g| g.metric_name() == metric.label());
        let matrix = match found {
            Some(g) if has_all(g, &all) => g.clone(),
            Some(g) if has_all(g, &train) => {
                report = report.note(format!(
                    "{} matrix covers training subjects only; computing test rows from ground truth",
                    metric.label()
                ));
                pairwise_matrix(&all, metric)?
            }
            _ => pairwise_matrix(&all, metric)?,
        };
        gt.push((metric, matrix));
    }
    if ctx.cfg.metrics.iter().any(|m| *m != Metric::Pbc) {
        report = report
            .note("aep-proxy and drmsp-proxy are simplified stand-ins for the published models");
    }

    for path in checkpoints {
        let ckpt = read_checkpoint(path)?;
        let label = stem(path);
        let train_z = infer_latents(&ckpt, &train, ckpt.train.invert_steps, ckpt.train.invert_lr)?;
        let test_z = infer_latents(&ckpt, &test, ckpt.train.invert_steps, ckpt.train.invert_lr)?;
        let anchors = &train_z;

        let rec_train = reconstructions(&ckpt, &train, &train_z)?;
        let rec_test = reconstructions(&ckpt, &test, &test_z)?;
        let rec_all: Vec<MagnitudeSet> = rec_train.iter().chain(&rec_test).cloned().collect();

        let mut rows: Vec<CorrelationReport> = Vec::new();
        for (metric, matrix) in &gt {
            let rec_matrix = pairwise_matrix(&rec_all, *metric)?;
            for (target_label, mm) in [("gt", matrix), ("reconstructed", &rec_matrix)] {
                rows.push(anchored_correlation(
                    anchors,
                    anchors,
                    mm,
                    "train",
                    target_label,
                )?);
                if test.len() >= 3 {
                    rows.push(anchored_correlation(
                        anchors,
                        &test_z,
                        mm,
                        "test",
                        target_label,
                    )?);
                }
            }
        }
        if test.len() < 3 {
            report = report.note(format!(
                "{label}: fewer than 3 test subjects, test correlations skipped"
            ));
        }
        let recon = vec![
            reconstruction_report(&ckpt, &train, &train_z, "train")?,
            reconstruction_report(&ckpt, &test, &test_z, "test")?,
        ];
        report = report
            .table(&format!("{label}/correlation"), &rows)?
            .table(&format!("{label}/reconstruction"), &recon)?
            .table(&format!("{label}/train_config"), &ckpt.train)?;
    }
    let path = match out {
        Some(p) => p,
        None => ctx.run.path("reports/eval.json")?,
    };
    write_report(&report, &path)?;
    ctx.record(&path, "eval", "report")?;
    Ok(path)
}

#[derive(Serialize)]
struct SelectionSummary {
    metric: String,
    k: usize,
    rows: Vec<SelectionScore>,
    mean_best_metric: f64,
    mean_best_sde_db: f64,
    mean_topk_metric: f64,
    mean_topk_sde_db: f64,
}

pub fn select(
    ctx: &Ctx,
    checkpoint: &Path,
    manifest: Option<PathBuf>,
    k: Option<usize>,
    out: Option<PathBuf>,
) -> Result<PathBuf> {
    let ckpt = read_checkpoint(checkpoint)?;
    let m = read_manifest(manifest.unwrap_or_else(|| ctx.default_manifest()))?;
    let train = load_subjects(&m, &m.manifest.split.train, &ctx.cfg.preprocess)?;
    let test = load_subjects(&m, &m.manifest.split.test, &ctx.cfg.preprocess)?;
    if test.is_empty() {
        return Err(Error::Config("manifest has no test subjects".into()));
    }
    let metric = ctx.cfg.metrics[0];
    let k = k.unwrap_or(ctx.cfg.select_k);
    let pool: Vec<String> = train.iter().map(|s| s.subject_id().to_owned()).collect();
    let mut rows = Vec::with_capacity(test.len());
    for t in &test {
        let picked = personalization_select(
            &ckpt,
            t,
            &pool,
            k,
            ckpt.train.invert_steps,
            ckpt.train.invert_lr,
        )?;
        let chosen: Vec<&MagnitudeSet> = picked
            .iter()
            .map(|id| {
                train
                    .iter()
                    .find(|s| s.subject_id() == id)
                    .expect("pool id")
            })
            .collect();
        rows.push(score_selection(t, &chosen, metric)?);
    }
    let col = |f: fn(&SelectionScore) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    let summary = SelectionSummary {
        metric: metric.label().to_owned(),
        k,
        mean_best_metric: col(|r| r.best_metric),
        mean_best_sde_db: col(|r| r.best_sde_db),
        mean_topk_metric: col(|r| r.topk_metric),
        mean_topk_sde_db: col(|r| r.topk_sde_db),
        rows,
    };
    let label = stem(checkpoint);
    let report = ctx
        .report("select")
        .note(INVERSION_NOTE)
        .table(&format!("{label}/selection"), &summary)?
        .table(&format!("{label}/train_config"), &ckpt.train)?;
    let path = match out {
        Some(p) => p,
        None => ctx.run.path(format!("reports/select-{label}.json"))?,
    };
    write_report(&report, &path)?;
    ctx.record(&path, "select", "report")?;
    Ok(path)
}

pub fn parse_flags(label: &str) -> Result<LossFlags> {
    let mut flags = LossFlags::default();
    for part in label.split('+') {
        match part.trim() {
            "l2" => {}
            "align" => flags.align = true,
            "pbc" => flags.pbc = true,
            other => return Err(Error::Config(format!("unknown loss term {other:?}"))),
        }
    }
    Ok(flags)
}
