//! `correct` and `evaluate` as library calls.

use std::path::{Path, PathBuf};

use moco_core::container::{
    load_boundaries, load_vessels, load_volume, load_x_vec, load_z_map, save_boundaries,
    save_vessels, save_volume, save_x_vec, save_z_map,
};
use moco_core::eval::{default_h_ref, tilt_correct, EvalInputs};
use moco_core::linalg::{ls_line_project, tilt_displacement};
use moco_core::nn::{checkpoint, vesselnet_forward, xnet_forward, znet_forward};
use moco_core::volume::{apply_x_displacement, apply_z_displacement, normalize_boundaries, pixel_shift};
use moco_core::{MetricsReport, NetKind, Network, VesselKind, XDisplacementVec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleManifest;
use crate::render::render_volume;
use crate::CliError;

pub const CORRECT_MANIFEST: &str = "correct.json";

#[derive(Debug, Clone)]
pub struct CorrectOptions {
    pub volume: PathBuf,
    pub boundaries: Option<PathBuf>,
    pub z_model: PathBuf,
    pub with_seg: bool,
    pub ls_post: bool,
    pub tilt: bool,
    pub h_ref: Option<f64>,
    pub x_stage: bool,
    pub vessel_model: PathBuf,
    pub x_model: PathBuf,
    pub out: PathBuf,
}

/// Files written by `correct`, relative to its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectManifest {
    pub z_norm: f64,
    pub x_norm: f64,
    pub corrected: String,
    /// Raw Z-network output.
    pub dz: String,
    /// LS-projected Z displacement, when requested.
    pub dz_post: Option<String>,
    /// Tilt displacement in pixels, when requested.
    pub tilt: Option<String>,
    /// En-face vessel probabilities fed to the X network.
    pub vessels: Option<String>,
    pub dx: Option<String>,
    pub dx_px: Option<Vec<i64>>,
    pub boundaries: Option<String>,
}

impl CorrectManifest {
    /// The axial displacement that was applied to the volume.
    pub fn applied_dz(&self) -> &str {
        self.dz_post.as_deref().unwrap_or(&self.dz)
    }
}

fn load_net(path: &Path, kind: NetKind) -> anyhow::Result<Network> {
    if !path.exists() {
        return Err(CliError::Usage(format!("{kind} checkpoint {} does not exist", path.display())).into());
    }
    let net = checkpoint::load(path)?;
    if net.kind() != kind {
        return Err(CliError::Data(format!(
            "{} holds a {} network, expected {kind}",
            path.display(),
            net.kind()
        ))
        .into());
    }
    Ok(net)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn correct(o: &CorrectOptions) -> anyhow::Result<CorrectManifest> {
    if (o.with_seg || o.tilt) && o.boundaries.is_none() {
        return Err(CliError::Usage("--with-seg and --tilt need --boundaries".into()).into());
    }
    let z = load_net(&o.z_model, NetKind::Z)?;
    if z.config().use_segmentation_input != o.with_seg {
        let msg = if o.with_seg {
            "the Z checkpoint was trained without boundary input; drop --with-seg"
        } else {
            "the Z checkpoint expects boundary input; pass --with-seg"
        };
        return Err(CliError::Usage(msg.into()).into());
    }
    let (vessel, x) = if o.x_stage {
        (Some(load_net(&o.vessel_model, NetKind::Vessel)?), Some(load_net(&o.x_model, NetKind::X)?))
    } else {
        (None, None)
    };

    let v = load_volume(&o.volume)?;
    let b = o.boundaries.as_ref().map(|p| load_boundaries(p, v.height())).transpose()?;
    std::fs::create_dir_all(&o.out).map_err(|e| CliError::Data(format!("cannot create {}: {e}", o.out.display())))?;
    let (z_norm, x_norm) = (z.config().z_norm, x.as_ref().map_or(z.config().x_norm, |n| n.config().x_norm));
    // inference never samples; the generator only satisfies the signature
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let nb = match (&b, o.with_seg) {
        (Some(b), true) => Some(normalize_boundaries(b, z_norm)?),
        _ => None,
    };
    let dz = znet_forward(&v, nb.as_ref(), &z, false, &mut rng)?;
    let mut m = CorrectManifest {
        z_norm,
        x_norm,
        corrected: "corrected.omv".into(),
        dz: "dz.omv".into(),
        dz_post: None,
        tilt: None,
        vessels: None,
        dx: None,
        dx_px: None,
        boundaries: None,
    };
    save_z_map(o.out.join(&m.dz), &dz)?;
    let applied = if o.ls_post {
        let post = ls_line_project(&dz)?;
        m.dz_post = Some("dz_post.omv".into());
        save_z_map(o.out.join(m.applied_dz()), &post)?;
        post
    } else {
        dz
    };
    let mut vol = apply_z_displacement(&v, &applied, z_norm, 0.0)?;
    let mut bounds = b.map(|b| b.shifted_z(|x, y| pixel_shift(applied.get(x, y), z_norm) as f64));

    if o.tilt {
        let bz = bounds.as_ref().expect("checked above");
        let h_ref = o.h_ref.unwrap_or_else(|| default_h_ref(v.height()));
        save_z_map(o.out.join("tilt.omv"), &tilt_displacement(bz, h_ref)?)?;
        let (vt, bt) = tilt_correct(&vol, bz, h_ref)?;
        m.tilt = Some("tilt.omv".into());
        vol = vt;
        bounds = Some(bt);
    }

    if let (Some(vessel), Some(x)) = (&vessel, &x) {
        let probs = vesselnet_forward(&vol, vessel, false, &mut rng)?.sigmoid()?;
        let dx = xnet_forward(&probs, x, false, &mut rng)?;
        let shifts = dx.pixel_shifts(x_norm);
        m.vessels = Some("vessels.omv".into());
        m.dx = Some("dx.omv".into());
        save_vessels(o.out.join("vessels.omv"), &probs)?;
        save_x_vec(o.out.join("dx.omv"), &dx)?;
        vol = apply_x_displacement(&vol, &dx, x_norm, 0.0)?;
        bounds = bounds.map(|b| b.shifted_x(&shifts)).transpose()?;
        m.dx_px = Some(shifts);
    }

    save_volume(o.out.join(&m.corrected), &vol)?;
    if let Some(b) = &bounds {
        m.boundaries = Some("boundaries.omv".into());
        save_boundaries(o.out.join("boundaries.omv"), b)?;
    }
    write_json(&o.out.join(CORRECT_MANIFEST), &m)?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    /// Output directory of `correct`.
    pub pred: PathBuf,
    /// Sample directory or its manifest.
    pub sample: PathBuf,
    pub out: PathBuf,
    pub h_ref: Option<f64>,
    pub render: Option<PathBuf>,
    pub gamma: f64,
}

pub fn evaluate(o: &EvaluateOptions) -> anyhow::Result<MetricsReport> {
    let text = std::fs::read_to_string(o.pred.join(CORRECT_MANIFEST))
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", o.pred.join(CORRECT_MANIFEST).display())))?;
    let pm: CorrectManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("malformed {CORRECT_MANIFEST}: {e}")))?;
    let (sm, sdir) = SampleManifest::read(&o.sample)?;
    if pm.z_norm != sm.z_norm || pm.x_norm != sm.x_norm {
        return Err(CliError::Data(format!(
            "normalization mismatch: prediction uses z_norm {} x_norm {}, ground truth {} {}",
            pm.z_norm, pm.x_norm, sm.z_norm, sm.x_norm
        ))
        .into());
    }
    let Some(pred_b) = &pm.boundaries else {
        return Err(CliError::Data("prediction has no boundaries; rerun correct with --boundaries".into()).into());
    };
    let pred_volume = load_volume(o.pred.join(&pm.corrected))?;
    let gt_volume = load_volume(sdir.join(&sm.clean))?;
    if pred_volume.dims() != gt_volume.dims() {
        return Err(CliError::Data("predicted and ground-truth volumes differ in shape".into()).into());
    }
    let h = gt_volume.height();
    let pred_dx = match &pm.dx {
        Some(f) => load_x_vec(o.pred.join(f))?,
        None => XDisplacementVec::zeros(gt_volume.slices()),
    };
    let report = MetricsReport::compute(&EvalInputs {
        pred_volume: &pred_volume,
        gt_volume: &gt_volume,
        pred_boundaries: &load_boundaries(o.pred.join(pred_b), h)?,
        gt_boundaries: &load_boundaries(sdir.join(&sm.clean_boundaries), h)?,
        pred_dz: &load_z_map(o.pred.join(pm.applied_dz()))?,
        gt_dz: &load_z_map(sdir.join(&sm.gt_z))?,
        pred_dx: &pred_dx,
        gt_dx: &load_x_vec(sdir.join(&sm.gt_x))?,
        gt_vessels: &load_vessels(sdir.join(&sm.vessels), VesselKind::Binary)?,
        z_norm: sm.z_norm,
        x_norm: sm.x_norm,
        h_ref: o.h_ref.unwrap_or_else(|| default_h_ref(h)),
    })?;
    if let Some(dir) = &o.render {
        render_volume(&pred_volume, dir, "pred", o.gamma)?;
        render_volume(&gt_volume, dir, "gt", o.gamma)?;
    }
    if let Some(parent) = o.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    write_json(&o.out, &report)?;
    Ok(report)
}
