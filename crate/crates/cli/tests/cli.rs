use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use moco_cli::config::PipelineConfig;
use moco_cli::dataset::{read_manifest, split_sizes};
use moco_cli::{correct, evaluate, CorrectOptions, EvaluateOptions, SampleManifest};
use moco_core::container::{load_boundaries, load_vessels, load_volume, load_x_vec, load_z_map, save_boundaries, save_volume, save_x_vec, save_z_map};
use moco_core::eval::{default_h_ref, EvalInputs};
use moco_core::nn::checkpoint;
use moco_core::{MetricsReport, NetConfig, NetKind, Network, PhantomConfig, VesselKind};

fn moco() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_moco"));
    c.env_remove(moco_cli::CONFIG_ENV);
    c
}

fn tiny_config(root: &Path) -> PathBuf {
    let mut cfg = PipelineConfig::default();
    cfg.paths.data_dir = root.join("data");
    cfg.paths.checkpoint_dir = root.join("ckpt");
    cfg.paths.report_path = root.join("report.json");
    cfg.phantom = PhantomConfig { height: 16, width: 32, slices: 8, ..Default::default() };
    let small = |mut n: NetConfig| {
        n.base_channels = 2;
        n.levels = 2;
        n.seg_hidden = 3;
        n
    };
    cfg.z_net = Some(small(NetConfig::z(16, 32)));
    cfg.vessel_net = Some(small(NetConfig::vessel(16, 32)));
    cfg.x_net = Some(small(NetConfig::x(32)));
    cfg.motion.sigma_y = 2.0;
    let path = root.join("moco.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn split_proportions() {
    assert_eq!(split_sizes(198, [142, 19, 37]), [142, 19, 37]);
    assert_eq!(split_sizes(0, [142, 19, 37]), [0, 0, 0]);
    for n in 0..300 {
        assert_eq!(split_sizes(n, [142, 19, 37]).iter().sum::<usize>(), n);
    }
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        run_ok(moco().arg("--config").arg(&cfg).args(["simulate", "--count", "10", "--seed", "7", "--out"]).arg(&out));
    }
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert_eq!(a.len(), 1 + 10 * 8);
    assert_eq!(a, b);
    let m = read_manifest(&tmp.path().join("a")).unwrap();
    assert_eq!((m.splits.train.len(), m.splits.val.len(), m.splits.test.len()), (7, 1, 2));
}

#[test]
fn simulate_zero_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    run_ok(moco().args(["simulate", "--count", "0", "--out"]).arg(&out));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.count, 0);
    assert!(m.splits.train.is_empty() && m.splits.val.is_empty() && m.splits.test.is_empty());
}

#[test]
fn stage_x_requires_vessel_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = moco().arg("--config").arg(&cfg).args(["train", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vessel checkpoint"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = moco().args(["train", "q"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"phantom\": {\"height\": 4}}").unwrap();
    let out = moco().arg("--config").arg(&bad).args(["simulate", "--count", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = moco()
        .env(moco_cli::CONFIG_ENV, &bad)
        .args(["simulate", "--count", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "config path is read from the environment");

    let cfg = tiny_config(tmp.path());
    let out = moco().arg("--config").arg(&cfg).args(["train", "z"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "missing dataset is a data error");
}

fn zero_network(kind: NetKind, cfg: NetConfig, path: &Path) {
    let mut net = Network::new(kind, cfg, 0).unwrap();
    let n = net.params().count();
    net.params_mut().set_flat(&vec![0.0; n]).unwrap();
    checkpoint::save(path, &net).unwrap();
}

fn simulate(tmp: &Path, cfg: &Path, count: usize) -> PathBuf {
    let data = tmp.join("data");
    run_ok(moco().arg("--config").arg(cfg).args(["simulate", "--count", &count.to_string(), "--out"]).arg(&data));
    data
}

#[test]
fn zero_networks_leave_the_volume_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    let data = simulate(tmp.path(), &cfg_path, 3);
    let ck = tmp.path().join("zero");
    std::fs::create_dir_all(&ck).unwrap();
    for kind in [NetKind::Z, NetKind::Vessel, NetKind::X] {
        zero_network(kind, cfg.net(kind, 16, 32), &ck.join(format!("{kind}.json")));
    }
    let sample = data.join("sample_0000");
    let input = sample.join("volume.omv");
    let before = std::fs::read(&input).unwrap();
    let out = tmp.path().join("out");
    let m = correct(&CorrectOptions {
        volume: input.clone(),
        boundaries: Some(sample.join("boundaries.omv")),
        z_model: ck.join("z.json"),
        with_seg: true,
        ls_post: true,
        tilt: false,
        h_ref: None,
        x_stage: true,
        vessel_model: ck.join("vessel.json"),
        x_model: ck.join("x.json"),
        out: out.clone(),
    })
    .unwrap();
    assert_eq!(std::fs::read(&input).unwrap(), before, "input must not be modified");
    assert_eq!(load_volume(out.join(&m.corrected)).unwrap(), load_volume(&input).unwrap());
    assert_eq!(m.dx_px.as_deref(), Some(&[0i64; 8][..]));
    for f in ["dz.omv", "dz_post.omv", "vessels.omv", "dx.omv", "boundaries.omv", "correct.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn seg_flag_must_match_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    let data = simulate(tmp.path(), &cfg_path, 1);
    let z = tmp.path().join("z.json");
    zero_network(NetKind::Z, cfg.net(NetKind::Z, 16, 32), &z);
    let out = moco()
        .args(["correct", "--volume"])
        .arg(data.join("sample_0000/volume.omv"))
        .arg("--z-model")
        .arg(&z)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--with-seg"));
}

#[test]
fn shape_mismatch_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let data = simulate(tmp.path(), &cfg_path, 1);
    let z = tmp.path().join("z.json");
    zero_network(NetKind::Z, NetConfig::z(24, 32), &z);
    let s = data.join("sample_0000");
    let out = moco()
        .args(["correct", "--with-seg", "--volume"])
        .arg(s.join("volume.omv"))
        .arg("--boundaries")
        .arg(s.join("boundaries.omv"))
        .arg("--z-model")
        .arg(&z)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ls_post_is_affine_per_bscan() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    let data = simulate(tmp.path(), &cfg_path, 1);
    let z = tmp.path().join("z.json");
    // random weights give a displacement that is far from affine
    checkpoint::save(&z, &Network::new(NetKind::Z, cfg.net(NetKind::Z, 16, 32), 5).unwrap()).unwrap();
    let s = data.join("sample_0000");
    let out = tmp.path().join("o");
    correct(&CorrectOptions {
        volume: s.join("volume.omv"),
        boundaries: Some(s.join("boundaries.omv")),
        z_model: z,
        with_seg: true,
        ls_post: true,
        tilt: true,
        h_ref: None,
        x_stage: false,
        vessel_model: PathBuf::new(),
        x_model: PathBuf::new(),
        out: out.clone(),
    })
    .unwrap();
    let d = load_z_map(out.join("dz_post.omv")).unwrap();
    for y in 0..d.slices() {
        let r = d.row(y);
        let step = r[1] - r[0];
        for x in 1..r.len() {
            assert!((r[x] - r[x - 1] - step).abs() < 1e-5, "row {y} is not affine");
        }
    }
    assert!(out.join("tilt.omv").exists());
}

/// Writes a `correct` output directory that holds the ground truth itself.
fn perfect_prediction(sample: &Path, out: &Path) {
    let (m, dir) = SampleManifest::read(sample).unwrap();
    std::fs::create_dir_all(out).unwrap();
    save_volume(out.join("corrected.omv"), &load_volume(dir.join(&m.clean)).unwrap()).unwrap();
    save_boundaries(out.join("boundaries.omv"), &load_boundaries(dir.join(&m.clean_boundaries), m.height).unwrap()).unwrap();
    save_z_map(out.join("dz.omv"), &load_z_map(dir.join(&m.gt_z)).unwrap()).unwrap();
    save_x_vec(out.join("dx.omv"), &load_x_vec(dir.join(&m.gt_x)).unwrap()).unwrap();
    let manifest = moco_cli::CorrectManifest {
        z_norm: m.z_norm,
        x_norm: m.x_norm,
        corrected: "corrected.omv".into(),
        dz: "dz.omv".into(),
        dz_post: None,
        tilt: None,
        vessels: None,
        dx: Some("dx.omv".into()),
        dx_px: None,
        boundaries: Some("boundaries.omv".into()),
    };
    std::fs::write(out.join("correct.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
}

#[test]
fn evaluate_perfect_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let data = simulate(tmp.path(), &cfg_path, 1);
    let pred = tmp.path().join("pred");
    perfect_prediction(&data.join("sample_0000"), &pred);
    let report_path = tmp.path().join("r/report.json");
    let render = tmp.path().join("png");
    let stdout = run_ok(
        moco()
            .args(["evaluate", "--pred"])
            .arg(&pred)
            .arg("--sample")
            .arg(data.join("sample_0000/manifest.json"))
            .arg("--out")
            .arg(&report_path)
            .arg("--render")
            .arg(&render),
    );
    let r: MetricsReport = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(serde_json::from_str::<MetricsReport>(stdout.trim()).unwrap(), r);
    assert_eq!(r.mae_z, 0.0);
    assert_eq!(r.mae_x, 0.0);
    assert!((r.pcc - 1.0).abs() < 1e-12);
    assert_eq!(r.dice, 1.0);
    assert_eq!((r.dist_x, r.dist_y), (0.0, 0.0));

    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let mut expected = ["mae_z", "mae_x", "pcc", "curv_x", "curv_y", "dist_x", "dist_y", "dist_xy", "dice"];
    expected.sort();
    let mut keys = keys;
    keys.sort();
    assert_eq!(keys, expected);
    for prefix in ["pred", "gt"] {
        for view in ["bscan", "cross", "enface"] {
            let img = image::open(render.join(format!("{prefix}_{view}.png"))).unwrap();
            assert!(img.width() > 0);
        }
    }
}

#[test]
fn evaluate_matches_module_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    let data = simulate(tmp.path(), &cfg_path, 1);
    let sample = data.join("sample_0000");
    let z = tmp.path().join("z.json");
    checkpoint::save(&z, &Network::new(NetKind::Z, cfg.net(NetKind::Z, 16, 32), 3).unwrap()).unwrap();
    let pred = tmp.path().join("pred");
    correct(&CorrectOptions {
        volume: sample.join("volume.omv"),
        boundaries: Some(sample.join("boundaries.omv")),
        z_model: z,
        with_seg: true,
        ls_post: false,
        tilt: false,
        h_ref: None,
        x_stage: false,
        vessel_model: PathBuf::new(),
        x_model: PathBuf::new(),
        out: pred.clone(),
    })
    .unwrap();
    let report = evaluate(&EvaluateOptions {
        pred: pred.clone(),
        sample: sample.clone(),
        out: tmp.path().join("report.json"),
        h_ref: None,
        render: None,
        gamma: 2.2,
    })
    .unwrap();

    let (m, dir) = SampleManifest::read(&sample).unwrap();
    let gt_volume = load_volume(dir.join(&m.clean)).unwrap();
    let direct = MetricsReport::compute(&EvalInputs {
        pred_volume: &load_volume(pred.join("corrected.omv")).unwrap(),
        gt_volume: &gt_volume,
        pred_boundaries: &load_boundaries(pred.join("boundaries.omv"), m.height).unwrap(),
        gt_boundaries: &load_boundaries(dir.join(&m.clean_boundaries), m.height).unwrap(),
        pred_dz: &load_z_map(pred.join("dz.omv")).unwrap(),
        gt_dz: &load_z_map(dir.join(&m.gt_z)).unwrap(),
        pred_dx: &moco_core::XDisplacementVec::zeros(8),
        gt_dx: &load_x_vec(dir.join(&m.gt_x)).unwrap(),
        gt_vessels: &load_vessels(dir.join(&m.vessels), VesselKind::Binary).unwrap(),
        z_norm: m.z_norm,
        x_norm: m.x_norm,
        h_ref: default_h_ref(m.height),
    })
    .unwrap();
    assert_eq!(report, direct);
}

#[test]
fn train_is_reproducible_and_learns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    simulate(tmp.path(), &cfg_path, 10);
    let mut histories = vec![];
    for run in ["r1", "r2"] {
        let out = tmp.path().join(run).join("z.json");
        run_ok(
            moco()
                .arg("--config")
                .arg(&cfg_path)
                .args(["train", "z", "--quiet", "--epochs", "15", "--seed", "3", "--out"])
                .arg(&out),
        );
        histories.push((
            std::fs::read(moco_cli::history_path(&out)).unwrap(),
            std::fs::read(&out).unwrap(),
            std::fs::read(out.with_extension("bin")).unwrap(),
        ));
    }
    assert_eq!(histories[0], histories[1]);
    let text = String::from_utf8(histories[0].0.clone()).unwrap();
    let val: Vec<f64> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["val"].as_f64().unwrap())
        .collect();
    assert_eq!(val.len(), 15);
    assert!(val.last().unwrap() < &val[0], "val loss did not drop: {val:?}");
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let data = simulate(tmp.path(), &cfg_path, 10);
    let base = || {
        let mut c = moco();
        c.arg("--config").arg(&cfg_path);
        c
    };
    for stage in ["z", "vessel", "x"] {
        run_ok(base().args(["train", stage, "--quiet", "--epochs", "2"]));
        assert!(tmp.path().join(format!("ckpt/{stage}.json")).exists());
        assert!(tmp.path().join(format!("ckpt/{stage}.history.jsonl")).exists());
    }
    let m = read_manifest(&data).unwrap();
    let sample = data.join(&m.splits.test[0]);
    let out = tmp.path().join("corrected");
    run_ok(
        base()
            .args(["correct", "--with-seg", "--ls-post", "--tilt", "--x-stage", "--volume"])
            .arg(sample.join("volume.omv"))
            .arg("--boundaries")
            .arg(sample.join("boundaries.omv"))
            .arg("--out")
            .arg(&out),
    );
    run_ok(base().args(["evaluate", "--pred"]).arg(&out).arg("--sample").arg(&sample));
    let r: MetricsReport = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert!(r.mae_z.is_finite() && r.pcc.is_finite() && (0.0..=1.0).contains(&r.dice));
}

#[test]
fn demo_run_reduces_axial_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let data = simulate(tmp.path(), &cfg_path, 40);
    let base = || {
        let mut c = moco();
        c.arg("--config").arg(&cfg_path);
        c
    };
    run_ok(base().args(["train", "z", "--quiet", "--epochs", "60", "--lr", "3e-3"]));
    let m = read_manifest(&data).unwrap();
    let (mut before, mut after) = (0.0, 0.0);
    for name in &m.splits.test {
        let sample = data.join(name);
        let (sm, _) = SampleManifest::read(&sample).unwrap();
        let gt = load_z_map(sample.join(&sm.gt_z)).unwrap();
        before += moco_core::eval::mae_z(&moco_core::ZDisplacementMap::zeros(32, 8), &gt, sm.z_norm).unwrap();
        let out = tmp.path().join("c").join(name);
        run_ok(
            base()
                .args(["correct", "--with-seg", "--volume"])
                .arg(sample.join("volume.omv"))
                .arg("--boundaries")
                .arg(sample.join("boundaries.omv"))
                .arg("--out")
                .arg(&out),
        );
        let report = tmp.path().join("r").join(format!("{name}.json"));
        run_ok(base().args(["evaluate", "--pred"]).arg(&out).arg("--sample").arg(&sample).arg("--out").arg(&report));
        let r: MetricsReport = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
        after += r.mae_z;
    }
    eprintln!("test split mae_z: uncorrected {before:.3}, corrected {after:.3}");
    assert!(after < before);
}
