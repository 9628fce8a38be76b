//! Losses, the optimizer and the three training stages.

mod check;
mod data;
pub mod loss;
mod optim;
mod stage;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::simulate::MotionConfig;

pub use check::{grad_check, GradCheck};
pub use data::{prepare_batch, stage_loss, CleanSample, StageBatch};
pub use loss::{
    center_mask, loss_bce, loss_disp, loss_smooth, loss_soft_dice, loss_total_z, loss_vessel,
    loss_xdisp, sigmoid, softplus, CenterMask, LossWeights,
};
pub use optim::Adam;
pub use stage::{
    train_stage, train_stage_with, validation_loss, Datasets, EpochRecord, Stage, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_disp: f64,
    pub lambda_smooth: f64,
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    pub lr: f64,
    /// Per-epoch learning-rate multiplier.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub z_norm: f64,
    pub x_norm: f64,
    pub seed: u64,
    /// Motion drawn for training and validation samples.
    pub motion: MotionConfig,
    /// Redraw motion and random flips every epoch instead of fixing them per sample.
    pub augment: bool,
}

impl TrainConfig {
    pub fn z(width: usize) -> Self {
        Self {
            lambda_disp: 1.0,
            lambda_smooth: 0.5,
            lambda_bce: 1.0,
            lambda_dice: 1.0,
            lr: 1e-3,
            lr_decay: 0.995,
            weight_decay: 1e-3,
            batch_size: 4,
            max_epochs: 500,
            z_norm: 10.0,
            x_norm: width as f64 / 512.0,
            seed: 0,
            motion: MotionConfig::default(),
            augment: true,
        }
    }

    pub fn vessel(width: usize) -> Self {
        Self { lr_decay: 0.99, ..Self::z(width) }
    }

    pub fn x(width: usize) -> Self {
        Self { lr: 1e-4, max_epochs: 1000, ..Self::vessel(width) }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            disp: self.lambda_disp,
            smooth: self.lambda_smooth,
            bce: self.lambda_bce,
            dice: self.lambda_dice,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_disp, self.lambda_smooth, self.lambda_bce, self.lambda_dice];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return arg_err("loss weights must be non-negative");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return arg_err("learning rate must be non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return arg_err("lr_decay must be in (0, 1]");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return arg_err("weight decay must be non-negative");
        }
        if self.batch_size == 0 {
            return arg_err("batch size must be >= 1");
        }
        if !(self.z_norm > 0.0 && self.x_norm > 0.0) {
            return arg_err("normalization factors must be positive");
        }
        Ok(())
    }
}
