mod common;

use common::*;
use moco_core::train::{train_stage, validation_loss, Datasets, Stage, TrainConfig};
use moco_core::{Error, NetKind, Network};

fn z_config(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::z(16);
    cfg.max_epochs = epochs;
    cfg.motion.sigma_y = 2.0;
    cfg
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let samples = tiny_samples(3);
    let net = Network::new(NetKind::Z, tiny_config(NetKind::Z), 4).unwrap();
    let before = net.params().clone();
    let mut cfg = z_config(2);
    cfg.lr = 0.0;
    let out = train_stage(Stage::Z, net, Datasets { train: &samples[..2], val: &samples[2..] }, &cfg).unwrap();
    assert_eq!(out.network.params(), &before);
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.history[0].val, out.history[1].val);
}

#[test]
fn single_sample_overfits() {
    let samples = tiny_samples(1);
    let mut net_cfg = tiny_config(NetKind::Z);
    net_cfg.dropout_p = 0.0;
    net_cfg.base_channels = 4;
    let net = Network::new(NetKind::Z, net_cfg, 1).unwrap();
    let mut cfg = z_config(200);
    cfg.augment = false;
    cfg.lr = 1e-2;
    cfg.weight_decay = 0.0;
    let out = train_stage(Stage::Z, net, Datasets { train: &samples, val: &samples }, &cfg).unwrap();
    let first = out.history[0].train;
    let reached = out.history.iter().position(|r| r.train < 0.1 * first);
    eprintln!("below 10% of the first epoch at epoch {reached:?}");
    assert!(reached.is_some(), "train loss went from {first} to {}", out.history.last().unwrap().train);
}

#[test]
fn best_checkpoint_reproduces_its_validation_loss() {
    let samples = tiny_samples(4);
    let net = Network::new(NetKind::Z, tiny_config(NetKind::Z), 2).unwrap();
    let cfg = z_config(6);
    let data = Datasets { train: &samples[..3], val: &samples[3..] };
    let out = train_stage(Stage::Z, net, data, &cfg).unwrap();
    let min = out.history.iter().map(|r| r.val).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val, min);
    assert_eq!(out.history[out.best_epoch].val, min);
    assert_eq!(validation_loss(Stage::Z, &out.network, data.val, &cfg).unwrap(), out.best_val);
}

#[test]
fn training_is_deterministic() {
    let samples = tiny_samples(4);
    let run = |kind: NetKind| {
        let vessel = Network::new(NetKind::Vessel, tiny_config(NetKind::Vessel), 8).unwrap();
        let net = Network::new(kind, tiny_config(kind), 3).unwrap();
        let stage = match kind {
            NetKind::Z => Stage::Z,
            NetKind::Vessel => Stage::Vessel,
            NetKind::X => Stage::X { vessel: &vessel },
        };
        let out = train_stage(stage, net, Datasets { train: &samples[..3], val: &samples[3..] }, &z_config(3)).unwrap();
        (out.history, out.network.params().clone())
    };
    for kind in [NetKind::Z, NetKind::Vessel, NetKind::X] {
        assert_eq!(run(kind), run(kind), "{kind}");
    }
}

#[test]
fn stage_and_network_must_agree() {
    let samples = tiny_samples(2);
    let data = Datasets { train: &samples[..1], val: &samples[1..] };
    let z = Network::new(NetKind::Z, tiny_config(NetKind::Z), 0).unwrap();
    assert!(matches!(train_stage(Stage::Vessel, z.clone(), data, &z_config(1)), Err(Error::InvalidArgument(_))));
    let x = Network::new(NetKind::X, tiny_config(NetKind::X), 0).unwrap();
    assert!(matches!(train_stage(Stage::X { vessel: &z }, x, data, &z_config(1)), Err(Error::InvalidArgument(_))));
    let empty = Datasets { train: &samples[..1], val: &[] };
    assert!(train_stage(Stage::Z, z, empty, &z_config(1)).is_err());
}

#[test]
fn exploding_learning_rate_is_reported() {
    let samples = tiny_samples(2);
    let net = Network::new(NetKind::X, tiny_config(NetKind::X), 0).unwrap();
    let vessel = Network::new(NetKind::Vessel, tiny_config(NetKind::Vessel), 1).unwrap();
    let mut cfg = z_config(50);
    cfg.lr = 1e300;
    cfg.lr_decay = 1.0;
    let r = train_stage(Stage::X { vessel: &vessel }, net, Datasets { train: &samples[..1], val: &samples[1..] }, &cfg);
    assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
}
