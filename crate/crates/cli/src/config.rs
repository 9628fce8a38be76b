use std::path::{Path, PathBuf};

use anyhow::Context;
use moco_core::{MotionConfig, NetConfig, NetKind, PhantomConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_path: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_path: "report.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub gamma: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { gamma: 2.2 }
    }
}

/// Everything a pipeline run can be configured with. Missing sections fall
/// back to defaults derived from the phantom dimensions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub phantom: PhantomConfig,
    pub motion: MotionConfig,
    /// `[train, val, test]` proportions used by `simulate`.
    pub split: Option<[usize; 3]>,
    pub z_train: Option<TrainConfig>,
    pub vessel_train: Option<TrainConfig>,
    pub x_train: Option<TrainConfig>,
    pub z_net: Option<NetConfig>,
    pub vessel_net: Option<NetConfig>,
    pub x_net: Option<NetConfig>,
    pub render: RenderOptions,
}

pub const DEFAULT_SPLIT: [usize; 3] = [142, 19, 37];

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.phantom.validate().context("phantom section")?;
        if !(self.render.gamma.is_finite() && self.render.gamma > 0.0) {
            return Err(CliError::Usage("render.gamma must be positive".into()).into());
        }
        if self.split.is_some_and(|s| s.iter().sum::<usize>() == 0) {
            return Err(CliError::Usage("split proportions must not all be zero".into()).into());
        }
        for kind in [NetKind::Z, NetKind::Vessel, NetKind::X] {
            self.net(kind, self.phantom.height, self.phantom.width).validate(kind)?;
            self.train(kind, self.phantom.width).validate()?;
        }
        Ok(())
    }

    pub fn split(&self) -> [usize; 3] {
        self.split.unwrap_or(DEFAULT_SPLIT)
    }

    pub fn net(&self, kind: NetKind, height: usize, width: usize) -> NetConfig {
        let given = match kind {
            NetKind::Z => &self.z_net,
            NetKind::Vessel => &self.vessel_net,
            NetKind::X => &self.x_net,
        };
        given.clone().unwrap_or_else(|| match kind {
            NetKind::Z => NetConfig::z(height, width),
            NetKind::Vessel => NetConfig::vessel(height, width),
            NetKind::X => NetConfig::x(width),
        })
    }

    /// Stage training config; motion comes from the pipeline unless the stage sets its own.
    pub fn train(&self, kind: NetKind, width: usize) -> TrainConfig {
        let given = match kind {
            NetKind::Z => &self.z_train,
            NetKind::Vessel => &self.vessel_train,
            NetKind::X => &self.x_train,
        };
        given.clone().unwrap_or_else(|| {
            let base = match kind {
                NetKind::Z => TrainConfig::z(width),
                NetKind::Vessel => TrainConfig::vessel(width),
                NetKind::X => TrainConfig::x(width),
            };
            TrainConfig { motion: self.motion, ..base }
        })
    }

    pub fn checkpoint_path(&self, kind: NetKind) -> PathBuf {
        self.paths.checkpoint_dir.join(format!("{kind}.json"))
    }
}
