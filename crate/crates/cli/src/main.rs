mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hrtf_percept::metrics::Metric;
use hrtf_percept::{Error, ErrorKind, Result};

use artifacts::RunDir;
use commands::Ctx;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "hrtf-percept",
    version,
    about = "Perception-informed HRTF latent representations"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run config; omitted fields come from the preset or defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for this command. Required by train and invert.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for pairwise metrics (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_parser = ["desk"])]
    preset: Option<String>,
    /// Every output lands under this directory, indexed in artifacts.json.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic subjects and a seeded 80/20 manifest.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        azimuths: Option<usize>,
        #[arg(long)]
        elevations: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Pairwise perceptual distances over the training split.
    Metrics {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "pbc")]
        metric: Metric,
        /// Include test subjects (diagnostics only).
        #[arg(long)]
        include_test: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classical MDS of a distance matrix.
    Mmds {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generative latent optimization of the decoder.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        mmds: Option<PathBuf>,
        /// Loss terms, e.g. `l2`, `l2+align`, `l2+align+pbc`.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latent of an unseen subject with the decoder frozen.
    Invert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation and reconstruction tables for one or more checkpoints.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Precomputed matrices; missing metrics are computed from the data.
        #[arg(long = "matrix")]
        matrices: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nearest training subjects in latent space for every test subject.
    Select {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_config(g: &Global, command: &Command) -> Result<RunConfig> {
    let base = match &g.preset {
        Some(p) => RunConfig::preset(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path, base)?,
        None => base,
    };
    match command {
        Command::GenData {
            n,
            azimuths,
            elevations,
            ..
        } => {
            if let Some(n) = n {
                cfg.data.n_subjects = *n;
            }
            if let Some(a) = azimuths {
                cfg.data.n_azimuth = *a;
            }
            if let Some(e) = elevations {
                cfg.data.n_elevation = *e;
            }
            if let Some(s) = g.seed {
                cfg.data.seed = s;
            }
        }
        Command::Train {
            loss,
            epochs,
            hidden,
            ..
        } => {
            if let Some(l) = loss {
                cfg.train.loss_flags = commands::parse_flags(l)?;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(h) = hidden {
                cfg.train.hidden = *h;
            }
            if let Some(s) = g.seed {
                cfg.train.seed = s;
            }
        }
        Command::Select { k: Some(k), .. } => cfg.select_k = *k,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<PathBuf> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = resolve_config(&cli.global, &cli.command)?;
    let ctx = Ctx {
        run: RunDir::create(&cli.global.run_dir)?,
        cfg,
        seed: cli.global.seed,
    };
    log::info!("resolved config: {}", ctx.cfg.to_json());
    match cli.command {
        Command::GenData { out_dir, .. } => commands::gen_data(&ctx, out_dir),
        Command::Metrics {
            manifest,
            metric,
            include_test,
            out,
        } => commands::metrics(&ctx, manifest, metric, include_test, out),
        Command::Mmds { matrix, dim, out } => commands::mmds(&ctx, &matrix, dim, out),
        Command::Train {
            manifest,
            mmds,
            out,
            ..
        } => commands::train(&ctx, manifest, mmds, out),
        Command::Invert {
            checkpoint,
            subject,
            out,
        } => commands::invert(&ctx, &checkpoint, &subject, out),
        Command::Eval {
            checkpoints,
            manifest,
            matrices,
            out,
        } => commands::eval(&ctx, &checkpoints, manifest, &matrices, out),
        Command::Select {
            checkpoint,
            manifest,
            out,
            ..
        } => commands::select(&ctx, &checkpoint, manifest, None, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::GenData { .. } => "gen-data",
        Command::Metrics { .. } => "metrics",
        Command::Mmds { .. } => "mmds",
        Command::Train { .. } => "train",
        Command::Invert { .. } => "invert",
        Command::Eval { .. } => "eval",
        Command::Select { .. } => "select",
    };
    match run(cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hrtf-percept {name}: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}
