//! Evaluation metrics for corrected volumes.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{poly4_fit, poly_arclength, poly_chord, tilt_displacement, Poly4};
use crate::volume::{
    apply_z_displacement, pixel_shift, shift_rows, Boundaries, VesselKind, VesselMap, Volume,
    VolumeGeometry, XDisplacementVec, ZDisplacementMap, RPE,
};

/// Flat metrics record for one corrected volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae_z: f64,
    pub mae_x: f64,
    pub pcc: f64,
    pub curv_x: f64,
    pub curv_y: f64,
    pub dist_x: f64,
    pub dist_y: f64,
    pub dist_xy: f64,
    pub dice: f64,
}

/// `Z_norm * mean |d - d_gt|`, in pixels.
pub fn mae_z(d: &ZDisplacementMap, d_gt: &ZDisplacementMap, z_norm: f64) -> Result<f64> {
    if (d.width(), d.slices()) != (d_gt.width(), d_gt.slices()) {
        return dim_err("mae_z: displacement maps differ in shape");
    }
    let sum: f64 = d.values().iter().zip(d_gt.values()).map(|(a, b)| (a - b).abs()).sum();
    Ok(z_norm * sum / d.values().len() as f64)
}

/// `X_norm * mean_y |d - d_gt|`, in pixels.
pub fn mae_x(d: &XDisplacementVec, d_gt: &XDisplacementVec, x_norm: f64) -> Result<f64> {
    if d.len() != d_gt.len() {
        return dim_err("mae_x: displacement vectors differ in length");
    }
    let sum: f64 = d.values().iter().zip(d_gt.values()).map(|(a, b)| (a - b).abs()).sum();
    Ok(x_norm * sum / d.len() as f64)
}

/// Pearson correlation of two equally sized samples, two-pass in `f64`.
pub fn pcc_values<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if a.len() != b.len() || a.is_empty() {
        return dim_err("pcc: samples differ in length or are empty");
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v.into()).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v.into()).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x.into() - ma, y.into() - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("pcc of a constant sample".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn pcc(a: &Volume, b: &Volume) -> Result<f64> {
    if a.dims() != b.dims() {
        return dim_err("pcc: volumes differ in shape");
    }
    pcc_values(a.data(), b.data())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurvatureAxis {
    /// Central B-scan, `y = floor(N/2)`.
    X,
    /// Central cross-section, `x = floor(W/2)`.
    Y,
}

/// RPE profile through the volume center after bilinear tilt removal.
pub fn rpe_profile(b: &Boundaries, axis: CurvatureAxis) -> Result<Vec<f64>> {
    let tilt = tilt_displacement(b, 0.0)?;
    let (w, n) = (b.width(), b.slices());
    Ok(match axis {
        CurvatureAxis::X => {
            let y = n / 2;
            (0..w).map(|x| b.get(RPE, x, y) + tilt.get(x, y)).collect()
        }
        CurvatureAxis::Y => {
            let x = w / 2;
            (0..n).map(|y| b.get(RPE, x, y) + tilt.get(x, y)).collect()
        }
    })
}

/// Arc-length to chord ratio of the quartic fitted to the tilt-corrected RPE profile.
pub fn curvature_index(
    b: &Boundaries,
    axis: CurvatureAxis,
    geometry: &VolumeGeometry,
) -> Result<(f64, Poly4)> {
    let profile = rpe_profile(b, axis)?;
    if profile.len() < 5 {
        return Err(Error::Degenerate(format!("{} samples along {axis:?}", profile.len())));
    }
    let p = poly4_fit(&profile)?;
    let z_scale = geometry.extent_z_mm / b.height() as f64;
    let h_scale = match axis {
        CurvatureAxis::X => geometry.extent_x_mm / b.width() as f64,
        CurvatureAxis::Y => geometry.extent_y_mm / b.slices() as f64,
    };
    let k_max = profile.len() - 1;
    let len = poly_arclength(&p, k_max, z_scale, h_scale)?;
    let chord = poly_chord(&p, k_max, z_scale, h_scale);
    if !(chord > 0.0) {
        return Err(Error::Degenerate("zero chord".into()));
    }
    Ok((len / chord, p))
}

/// `(|curv_pred - curv_gt_same_axis|, |curv_pred - curv_x_gt|)`.
///
/// The second value is `Dist_xy` when `curv_pred` is the predicted Y curvature.
pub fn distortion(curv_pred: f64, curv_gt_same_axis: f64, curv_x_gt: f64) -> (f64, f64) {
    ((curv_pred - curv_gt_same_axis).abs(), (curv_pred - curv_x_gt).abs())
}

/// `2 sum(s1 * s2) / (sum s1 + sum s2)`; two empty maps count as perfect agreement.
pub fn dice_binary(s1: &VesselMap, s2: &VesselMap) -> Result<f64> {
    if s1.kind() != VesselKind::Binary || s2.kind() != VesselKind::Binary {
        return arg_err("dice expects binary maps");
    }
    if (s1.width(), s1.slices()) != (s2.width(), s2.slices()) {
        return dim_err("dice: maps differ in shape");
    }
    let inter: f64 = s1.values().iter().zip(s2.values()).map(|(a, b)| a * b).sum();
    let total: f64 = s1.values().iter().sum::<f64>() + s2.values().iter().sum::<f64>();
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter / total)
}

/// Applies the corner-based tilt correction to a volume and its boundaries.
pub fn tilt_correct(v: &Volume, b: &Boundaries, h_ref: f64) -> Result<(Volume, Boundaries)> {
    let d = tilt_displacement(b, h_ref)?;
    let out = apply_z_displacement(v, &d, 1.0, 0.0)?;
    let shifted = b.shifted_z(|x, y| pixel_shift(d.get(x, y), 1.0) as f64);
    Ok((out, shifted))
}

/// Default tilt reference height: 300 px of a 496 px A-scan, scaled to `height`.
pub fn default_h_ref(height: usize) -> f64 {
    (300.0 * height as f64 / 496.0).round()
}

/// Ground-truth vessel mask moved by the lateral motion left after correction.
///
/// `injected_gt` undoes the injected motion exactly; `predicted` is the
/// network's correction. The residual shift per B-scan is their difference in
/// integer pixels.
pub fn residual_vessel_mask(
    gt_mask: &VesselMap,
    predicted: &XDisplacementVec,
    injected_gt: &XDisplacementVec,
    x_norm: f64,
) -> Result<VesselMap> {
    if predicted.len() != gt_mask.slices() || injected_gt.len() != gt_mask.slices() {
        return dim_err("residual mask: displacement length does not match the map");
    }
    let residual: Vec<i64> = predicted
        .pixel_shifts(x_norm)
        .iter()
        .zip(injected_gt.pixel_shifts(x_norm))
        .map(|(p, g)| p - g)
        .collect();
    let values = shift_rows(gt_mask.values(), gt_mask.width(), &residual, 0.0);
    VesselMap::new(gt_mask.width(), gt_mask.slices(), values, gt_mask.kind())
}

/// Arrays needed to score one corrected volume against its ground truth.
pub struct EvalInputs<'a> {
    pub pred_volume: &'a Volume,
    pub gt_volume: &'a Volume,
    pub pred_boundaries: &'a Boundaries,
    pub gt_boundaries: &'a Boundaries,
    pub pred_dz: &'a ZDisplacementMap,
    pub gt_dz: &'a ZDisplacementMap,
    pub pred_dx: &'a XDisplacementVec,
    pub gt_dx: &'a XDisplacementVec,
    pub gt_vessels: &'a VesselMap,
    pub z_norm: f64,
    pub x_norm: f64,
    pub h_ref: f64,
}

impl MetricsReport {
    /// PCC is taken between the tilt-corrected predicted and ground-truth volumes.
    pub fn compute(inp: &EvalInputs<'_>) -> Result<Self> {
        let geometry = inp.gt_volume.geometry();
        let (pred_t, _) = tilt_correct(inp.pred_volume, inp.pred_boundaries, inp.h_ref)?;
        let (gt_t, _) = tilt_correct(inp.gt_volume, inp.gt_boundaries, inp.h_ref)?;
        let (curv_x, _) = curvature_index(inp.pred_boundaries, CurvatureAxis::X, &geometry)?;
        let (curv_y, _) = curvature_index(inp.pred_boundaries, CurvatureAxis::Y, &geometry)?;
        let (gx, _) = curvature_index(inp.gt_boundaries, CurvatureAxis::X, &geometry)?;
        let (gy, _) = curvature_index(inp.gt_boundaries, CurvatureAxis::Y, &geometry)?;
        let (dist_x, _) = distortion(curv_x, gx, gx);
        let (dist_y, dist_xy) = distortion(curv_y, gy, gx);
        let moved = residual_vessel_mask(inp.gt_vessels, inp.pred_dx, inp.gt_dx, inp.x_norm)?;
        Ok(Self {
            mae_z: mae_z(inp.pred_dz, inp.gt_dz, inp.z_norm)?,
            mae_x: mae_x(inp.pred_dx, inp.gt_dx, inp.x_norm)?,
            pcc: pcc(&pred_t, &gt_t)?,
            curv_x,
            curv_y,
            dist_x,
            dist_y,
            dist_xy,
            dice: dice_binary(&moved, inp.gt_vessels)?,
        })
    }
}
