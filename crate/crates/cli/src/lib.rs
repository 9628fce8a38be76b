//! Pipeline front-end: simulate datasets, train the three stages, correct
//! volumes and evaluate them.

pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod render;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use moco_core::nn::checkpoint;
use moco_core::train::{train_stage_with, Datasets, Stage};
use moco_core::{NetKind, Network};

pub use config::PipelineConfig;
pub use dataset::{DatasetManifest, SampleManifest};
pub use pipeline::{correct, evaluate, CorrectManifest, CorrectOptions, EvaluateOptions};

pub const CONFIG_ENV: &str = "MOCO_CONFIG";

/// Errors raised by the front-end itself; core errors are classified in [`exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

/// 2 usage error, 3 data error, 4 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use moco_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => 2,
                CliError::Data(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) => 2,
                E::Dimension(_) | E::Format(_) | E::Io(_) | E::Json(_) => 3,
                E::NonFinite(_) | E::Degenerate(_) | E::Diverged { .. } => 4,
            };
        }
    }
    3
}

#[derive(Debug, Parser)]
#[command(name = "moco", version, about = "Axial and coronal motion correction for OCT volumes")]
pub struct Cli {
    /// Pipeline config (JSON). Flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantoms with injected motion and a train/val/test split.
    Simulate(SimulateCmd),
    /// Train one network stage.
    Train(TrainCmd),
    /// Correct one volume with trained checkpoints.
    Correct(CorrectCmd),
    /// Score a corrected volume against its ground truth.
    Evaluate(EvaluateCmd),
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split proportions as `train:val:test`.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<[usize; 3]>,
}

fn parse_split(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(':')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a + b + c > 0 => Ok([a, b, c]),
        [_, _, _] => Err("split proportions must not all be zero".into()),
        _ => Err("expected train:val:test".into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Z,
    Vessel,
    X,
}

impl From<StageArg> for NetKind {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Z => NetKind::Z,
            StageArg::Vessel => NetKind::Vessel,
            StageArg::X => NetKind::X,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(value_enum)]
    pub stage: StageArg,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint manifest to write; defaults to `<checkpoint_dir>/<stage>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSONL history; defaults to the checkpoint path with a `.history.jsonl` suffix.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Frozen vessel network for stage x.
    #[arg(long)]
    pub vessel: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct CorrectCmd {
    #[arg(long)]
    pub volume: PathBuf,
    /// Surfaces of the input volume, required by --with-seg and --tilt.
    #[arg(long)]
    pub boundaries: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub z_model: Option<PathBuf>,
    #[arg(long)]
    pub vessel_model: Option<PathBuf>,
    #[arg(long)]
    pub x_model: Option<PathBuf>,
    /// Feed the normalized boundaries to the Z network.
    #[arg(long)]
    pub with_seg: bool,
    /// Project each B-scan of the Z displacement onto a line.
    #[arg(long)]
    pub ls_post: bool,
    /// Corner-based tilt correction after the Z stage.
    #[arg(long)]
    pub tilt: bool,
    #[arg(long)]
    pub h_ref: Option<f64>,
    /// Run vessel segmentation and X correction.
    #[arg(long)]
    pub x_stage: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    /// Output directory of `correct`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth sample directory or manifest.
    #[arg(long)]
    pub sample: PathBuf,
    /// Report path; defaults to `paths.report_path` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub h_ref: Option<f64>,
    /// Directory for PNG renders of the corrected and ground-truth volumes.
    #[arg(long)]
    pub render: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Simulate(c) => cmd_simulate(&cfg, c),
        Command::Train(c) => cmd_train(&cfg, c),
        Command::Correct(c) => {
            let ckpt = |given: Option<PathBuf>, kind| given.unwrap_or_else(|| cfg.checkpoint_path(kind));
            let m = correct(&CorrectOptions {
                volume: c.volume,
                boundaries: c.boundaries,
                z_model: ckpt(c.z_model, NetKind::Z),
                with_seg: c.with_seg,
                ls_post: c.ls_post,
                tilt: c.tilt,
                h_ref: c.h_ref,
                x_stage: c.x_stage,
                vessel_model: ckpt(c.vessel_model, NetKind::Vessel),
                x_model: ckpt(c.x_model, NetKind::X),
                out: c.out.clone(),
            })?;
            println!("{}", c.out.join(&m.corrected).display());
            Ok(())
        }
        Command::Evaluate(c) => {
            let report = evaluate(&EvaluateOptions {
                pred: c.pred,
                sample: c.sample,
                out: c.out.unwrap_or_else(|| cfg.paths.report_path.clone()),
                h_ref: c.h_ref,
                render: c.render,
                gamma: cfg.render.gamma,
            })?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
    }
}

fn cmd_simulate(cfg: &PipelineConfig, c: SimulateCmd) -> anyhow::Result<()> {
    let out = c.out.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let z = cfg.net(NetKind::Z, cfg.phantom.height, cfg.phantom.width);
    let m = dataset::simulate(&dataset::SimulateArgs {
        out: &out,
        count: c.count,
        seed: c.seed,
        phantom: &cfg.phantom,
        motion: &cfg.motion,
        z_norm: z.z_norm,
        x_norm: z.x_norm,
        split: c.split.unwrap_or_else(|| cfg.split()),
    })?;
    println!(
        "{}: {} train, {} val, {} test",
        out.display(),
        m.splits.train.len(),
        m.splits.val.len(),
        m.splits.test.len()
    );
    Ok(())
}

pub fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("history.jsonl")
}

fn cmd_train(cfg: &PipelineConfig, c: TrainCmd) -> anyhow::Result<()> {
    let kind = NetKind::from(c.stage);
    // check the stage ordering before touching any data
    let vessel = if kind == NetKind::X {
        let path = c.vessel.clone().unwrap_or_else(|| cfg.checkpoint_path(NetKind::Vessel));
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "stage x needs a trained vessel checkpoint; {} does not exist (run `moco train vessel` or pass --vessel)",
                path.display()
            ))
            .into());
        }
        let net = checkpoint::load(&path)?;
        if net.kind() != NetKind::Vessel {
            return Err(CliError::Data(format!("{} is not a vessel checkpoint", path.display())).into());
        }
        Some(net)
    } else {
        None
    };

    let data = c.data.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let manifest = dataset::read_manifest(&data)?;
    let train = dataset::load_split(&data, &manifest.splits.train)?;
    let val = dataset::load_split(&data, &manifest.splits.val)?;
    if train.is_empty() || val.is_empty() {
        return Err(CliError::Data(format!(
            "{} needs non-empty train and val splits, found {} and {}",
            data.display(),
            train.len(),
            val.len()
        ))
        .into());
    }
    let (h, w, _) = train[0].volume.dims();
    let net_cfg = cfg.net(kind, h, w);
    let mut tcfg = cfg.train(kind, w);
    tcfg.z_norm = net_cfg.z_norm;
    tcfg.x_norm = net_cfg.x_norm;
    if let Some(e) = c.epochs {
        tcfg.max_epochs = e;
    }
    if let Some(s) = c.seed {
        tcfg.seed = s;
    }
    if let Some(lr) = c.lr {
        tcfg.lr = lr;
    }
    if let Some(b) = c.batch_size {
        tcfg.batch_size = b;
    }

    let out = c.out.unwrap_or_else(|| cfg.checkpoint_path(kind));
    let history = c.history.unwrap_or_else(|| history_path(&out));
    for p in [&out, &history] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    let init = Network::new(kind, net_cfg, tcfg.seed)?;
    let stage = match &vessel {
        Some(v) => Stage::X { vessel: v },
        None if kind == NetKind::Z => Stage::Z,
        None => Stage::Vessel,
    };
    let mut lines = Vec::new();
    let outcome = train_stage_with(stage, init, Datasets { train: &train, val: &val }, &tcfg, |r| {
        if !c.quiet {
            eprintln!("epoch {:4}  train {:.6}  val {:.6}  lr {:.3e}", r.epoch, r.train, r.val, r.lr);
        }
        lines.push(serde_json::to_string(r).expect("records serialize"));
    })?;
    checkpoint::save(&out, &outcome.network)?;
    let mut f = std::fs::File::create(&history)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", history.display())))?;
    for line in &lines {
        writeln!(f, "{line}")?;
    }
    println!(
        "{}: best epoch {} val {:.6}",
        out.display(),
        outcome.best_epoch,
        outcome.best_val
    );
    Ok(())
}
