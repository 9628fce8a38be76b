//! Loss functions. Each `*_grad` variant also returns the gradient with respect
//! to the prediction, in the prediction's own layout.

use crate::error::{arg_err, dim_err, Result};
use crate::linalg::ls_line_project;
use crate::volume::{VesselKind, VesselMap, XDisplacementVec, ZDisplacementMap};

/// Smallest denominator of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-7;

pub fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^l)` without overflow.
pub fn softplus(l: f64) -> f64 {
    l.max(0.0) + (-l.abs()).exp().ln_1p()
}

// subgradient of |r| with 0 at the kink
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-pixel loss weights, largest at the center of the en-face plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterMask {
    width: usize,
    slices: usize,
    values: Vec<f64>,
}

impl CenterMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    /// Laid out `y * W + x`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// All-ones mask.
    pub fn uniform(width: usize, slices: usize) -> Self {
        Self { width, slices, values: vec![1.0; width * slices] }
    }
}

fn hann(t: f64) -> f64 {
    (std::f64::consts::PI * t).sin().powi(2)
}

/// `M(x, y) = 0.2 + 0.8 hann(x / (W - 1)) hann(y / (N - 1))` with `hann(t) = sin^2(pi t)`.
pub fn center_mask(width: usize, slices: usize) -> Result<CenterMask> {
    if width < 2 || slices < 2 {
        return dim_err(format!("center mask needs W, N >= 2, got {width}x{slices}"));
    }
    let mut values = Vec::with_capacity(width * slices);
    for y in 0..slices {
        let hy = hann(y as f64 / (slices - 1) as f64);
        for x in 0..width {
            values.push(0.2 + 0.8 * hann(x as f64 / (width - 1) as f64) * hy);
        }
    }
    Ok(CenterMask { width, slices, values })
}

fn same_map(d: &ZDisplacementMap, other: &ZDisplacementMap) -> Result<()> {
    if (d.width(), d.slices()) != (other.width(), other.slices()) {
        return dim_err("displacement maps differ in shape");
    }
    Ok(())
}

/// Masked L1 over raw values.
pub fn loss_disp_grad(d: &[f64], d_gt: &[f64], mask: &[f64]) -> Result<(f64, Vec<f64>)> {
    if d.len() != d_gt.len() || d.len() != mask.len() || d.is_empty() {
        return dim_err("loss_disp operands differ in size");
    }
    let n = d.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(d.len());
    for ((a, b), m) in d.iter().zip(d_gt).zip(mask) {
        loss += m * (a - b).abs();
        grad.push(m * sign(a - b) / n);
    }
    Ok((loss / n, grad))
}

pub fn loss_disp(d: &ZDisplacementMap, d_gt: &ZDisplacementMap, m: &CenterMask) -> Result<f64> {
    same_map(d, d_gt)?;
    if (m.width, m.slices) != (d.width(), d.slices()) {
        return dim_err("mask does not match the displacement map");
    }
    Ok(loss_disp_grad(d.values(), d_gt.values(), &m.values)?.0)
}

/// Mean absolute deviation from `d_proj`, which is treated as a constant target.
pub fn loss_smooth_grad(d: &[f64], d_proj: &[f64]) -> Result<(f64, Vec<f64>)> {
    if d.len() != d_proj.len() || d.is_empty() {
        return dim_err("loss_smooth operands differ in size");
    }
    let n = d.len() as f64;
    let loss = d.iter().zip(d_proj).map(|(a, p)| (a - p).abs()).sum::<f64>() / n;
    let grad = d.iter().zip(d_proj).map(|(a, p)| sign(a - p) / n).collect();
    Ok((loss, grad))
}

pub fn loss_smooth(d: &ZDisplacementMap, d_proj: &ZDisplacementMap) -> Result<f64> {
    same_map(d, d_proj)?;
    Ok(loss_smooth_grad(d.values(), d_proj.values())?.0)
}

/// Weights of the composite losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub disp: f64,
    pub smooth: f64,
    pub bce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { disp: 1.0, smooth: 0.5, bce: 1.0, dice: 1.0 }
    }
}

pub fn loss_total_z_grad(
    d: &ZDisplacementMap,
    d_gt: &ZDisplacementMap,
    m: &CenterMask,
    w: &LossWeights,
) -> Result<(f64, Vec<f64>)> {
    let proj = ls_line_project(d)?;
    loss_total_z_grad_with(d, d_gt, m, w, &proj)
}

/// [`loss_total_z_grad`] against a given smoothness target instead of the projection of `d`.
pub fn loss_total_z_grad_with(
    d: &ZDisplacementMap,
    d_gt: &ZDisplacementMap,
    m: &CenterMask,
    w: &LossWeights,
    d_proj: &ZDisplacementMap,
) -> Result<(f64, Vec<f64>)> {
    same_map(d, d_gt)?;
    same_map(d, d_proj)?;
    if (m.width, m.slices) != (d.width(), d.slices()) {
        return dim_err("mask does not match the displacement map");
    }
    let (l1, g1) = loss_disp_grad(d.values(), d_gt.values(), &m.values)?;
    let (l2, g2) = loss_smooth_grad(d.values(), d_proj.values())?;
    let grad = g1.iter().zip(&g2).map(|(a, b)| w.disp * a + w.smooth * b).collect();
    Ok((w.disp * l1 + w.smooth * l2, grad))
}

pub fn loss_total_z(
    d: &ZDisplacementMap,
    d_gt: &ZDisplacementMap,
    m: &CenterMask,
    w: &LossWeights,
) -> Result<f64> {
    Ok(loss_total_z_grad(d, d_gt, m, w)?.0)
}

fn check_binary(s: &[f64]) -> Result<()> {
    if s.iter().any(|&v| v != 0.0 && v != 1.0) {
        return arg_err("ground-truth vessel map must be binary");
    }
    Ok(())
}

/// Mean of `softplus(l) - s * l`; gradient `(sigmoid(l) - s) / n`.
pub fn loss_bce_grad(logits: &[f64], s_gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != s_gt.len() || logits.is_empty() {
        return dim_err("loss_bce operands differ in size");
    }
    let n = logits.len() as f64;
    let loss = logits.iter().zip(s_gt).map(|(l, s)| softplus(*l) - s * l).sum::<f64>() / n;
    let grad = logits.iter().zip(s_gt).map(|(l, s)| (sigmoid(*l) - s) / n).collect();
    Ok((loss, grad))
}

fn map_pair(a: &VesselMap, b: &VesselMap) -> Result<()> {
    if (a.width(), a.slices()) != (b.width(), b.slices()) {
        return dim_err("vessel maps differ in shape");
    }
    Ok(())
}

pub fn loss_bce(logits: &VesselMap, s_gt: &VesselMap) -> Result<f64> {
    map_pair(logits, s_gt)?;
    if logits.kind() != VesselKind::Logits {
        return arg_err("loss_bce expects a logit map");
    }
    check_binary(s_gt.values())?;
    Ok(loss_bce_grad(logits.values(), s_gt.values())?.0)
}

/// `1 - 2 sum(p s) / (sum p + sum s)`; gradient with respect to `p`.
pub fn loss_soft_dice_grad(probs: &[f64], s_gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != s_gt.len() || probs.is_empty() {
        return dim_err("loss_soft_dice operands differ in size");
    }
    let inter: f64 = probs.iter().zip(s_gt).map(|(p, s)| p * s).sum();
    let den = (probs.iter().sum::<f64>() + s_gt.iter().sum::<f64>()).max(DICE_EPS);
    let grad = s_gt.iter().map(|s| -2.0 * (s * den - inter) / (den * den)).collect();
    Ok((1.0 - 2.0 * inter / den, grad))
}

pub fn loss_soft_dice(probs: &VesselMap, s_gt: &VesselMap) -> Result<f64> {
    map_pair(probs, s_gt)?;
    if probs.kind() == VesselKind::Logits {
        return arg_err("loss_soft_dice expects probabilities");
    }
    Ok(loss_soft_dice_grad(probs.values(), s_gt.values())?.0)
}

/// `w.bce * bce(l) + w.dice * dice(sigmoid(l))`, gradient with respect to the logits.
pub fn loss_vessel_grad(logits: &[f64], s_gt: &[f64], w: &LossWeights) -> Result<(f64, Vec<f64>)> {
    let (lb, gb) = loss_bce_grad(logits, s_gt)?;
    let probs: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let (ld, gd) = loss_soft_dice_grad(&probs, s_gt)?;
    let grad = gb
        .iter()
        .zip(&gd)
        .zip(&probs)
        .map(|((b, d), p)| w.bce * b + w.dice * d * p * (1.0 - p))
        .collect();
    Ok((w.bce * lb + w.dice * ld, grad))
}

pub fn loss_vessel(logits: &VesselMap, s_gt: &VesselMap, w: &LossWeights) -> Result<f64> {
    map_pair(logits, s_gt)?;
    if logits.kind() != VesselKind::Logits {
        return arg_err("loss_vessel expects a logit map");
    }
    check_binary(s_gt.values())?;
    Ok(loss_vessel_grad(logits.values(), s_gt.values(), w)?.0)
}

/// Mean of `(x_norm * d - d_gt)^2` with `d_gt` in pixels.
pub fn loss_xdisp_grad(d: &[f64], d_gt_px: &[f64], x_norm: f64) -> Result<(f64, Vec<f64>)> {
    if d.len() != d_gt_px.len() || d.is_empty() {
        return dim_err("loss_xdisp operands differ in size");
    }
    let n = d.len() as f64;
    let r: Vec<f64> = d.iter().zip(d_gt_px).map(|(a, g)| x_norm * a - g).collect();
    let loss = r.iter().map(|v| v * v).sum::<f64>() / n;
    let grad = r.iter().map(|v| 2.0 * x_norm * v / n).collect();
    Ok((loss, grad))
}

pub fn loss_xdisp(d: &XDisplacementVec, d_gt_px: &[f64], x_norm: f64) -> Result<f64> {
    Ok(loss_xdisp_grad(d.values(), d_gt_px, x_norm)?.0)
}
