use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::nn::{Mode, NetKind, Network};
use crate::simulate::random_flips;
use crate::train::data::{objective, prepare_item, CleanSample, StageBatch};
use crate::train::optim::Adam;
use crate::train::TrainConfig;

/// Training stage; the X stage reads vessel probabilities from a frozen vessel network.
#[derive(Debug, Clone, Copy)]
pub enum Stage<'a> {
    Z,
    Vessel,
    X { vessel: &'a Network },
}

impl Stage<'_> {
    pub fn kind(&self) -> NetKind {
        match self {
            Stage::Z => NetKind::Z,
            Stage::Vessel => NetKind::Vessel,
            Stage::X { .. } => NetKind::X,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Datasets<'a> {
    pub train: &'a [CleanSample],
    pub val: &'a [CleanSample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network holding the parameters with the lowest validation loss.
    pub network: Network,
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<EpochRecord>,
}

// independent streams of the master seed
const VAL_STREAM: u64 = 1;
const FIXED_TRAIN_STREAM: u64 = 2;

fn stream_seeds(seed: u64, stream: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.gen()).collect()
}

fn build(
    stage: &Stage<'_>,
    net: &Network,
    cfg: &TrainConfig,
    samples: &[CleanSample],
    seeds: &[u64],
    flips: Option<&[u64]>,
) -> Result<StageBatch> {
    let items = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let f = flips.map(|f| random_flips(f[i])).unwrap_or_default();
            prepare_item(stage, net, cfg, s, seeds[i], &f)
        })
        .collect::<Result<Vec<_>>>()?;
    StageBatch::new(stage.kind(), items)
}

fn mean_loss(net: &Network, batch: &StageBatch, cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..batch.len()).collect();
    for chunk in idx.chunks(cfg.batch_size) {
        let (l, _) = objective(net, net.params(), batch, chunk, cfg, &mut Mode::Eval, false)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / batch.len() as f64)
}

pub fn train_stage(
    stage: Stage<'_>,
    init: Network,
    data: Datasets<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_stage_with(stage, init, data, cfg, |_| {})
}

/// [`train_stage`] with a callback after every epoch.
pub fn train_stage_with(
    stage: Stage<'_>,
    init: Network,
    data: Datasets<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if init.kind() != stage.kind() {
        return arg_err(format!("stage {} cannot train a {} network", stage.kind(), init.kind()));
    }
    if let Stage::X { vessel } = stage {
        if vessel.kind() != NetKind::Vessel {
            return arg_err("the X stage needs a trained vessel network");
        }
    }
    if data.train.is_empty() || data.val.is_empty() {
        return arg_err("training and validation sets must be non-empty");
    }
    let mut net = init;
    let val_seeds = stream_seeds(cfg.seed, VAL_STREAM, data.val.len());
    let val = build(&stage, &net, cfg, data.val, &val_seeds, None)?;
    let fixed = if cfg.augment {
        None
    } else {
        let seeds = stream_seeds(cfg.seed, FIXED_TRAIN_STREAM, data.train.len());
        Some(build(&stage, &net, cfg, data.train, &seeds, None)?)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(net.params(), cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, Network)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let augmented;
        let train = match &fixed {
            Some(b) => b,
            None => {
                let seeds: Vec<u64> = (0..data.train.len()).map(|_| rng.gen()).collect();
                let flips: Vec<u64> = (0..data.train.len()).map(|_| rng.gen()).collect();
                augmented = build(&stage, &net, cfg, data.train, &seeds, Some(&flips))?;
                &augmented
            }
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = {
                let mut mode = Mode::Train(&mut rng);
                objective(&net, net.params(), train, chunk, cfg, &mut mode, true)?
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let grads = grads.expect("gradient requested");
            opt.step(net.params_mut(), &grads, lr)?;
            total += loss * chunk.len() as f64;
        }
        if net.params().check_finite().is_err() {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        let val_loss = mean_loss(&net, &val, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        let record = EpochRecord { epoch, train: total / train.len() as f64, val: val_loss, lr };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().map_or(true, |(_, v, _)| val_loss < *v) {
            best = Some((epoch, val_loss, net.clone()));
        }
    }
    let (best_epoch, best_val, network) = match best {
        Some(b) => b,
        None => {
            let v = mean_loss(&net, &val, cfg)?;
            (0, v, net)
        }
    };
    Ok(TrainOutcome { network, best_epoch, best_val, history })
}

/// Validation loss of `net` under the same fixed motion `train_stage` uses.
pub fn validation_loss(
    stage: Stage<'_>,
    net: &Network,
    val: &[CleanSample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let seeds = stream_seeds(cfg.seed, VAL_STREAM, val.len());
    let batch = build(&stage, net, cfg, val, &seeds, None)?;
    mean_loss(net, &batch, cfg)
}
