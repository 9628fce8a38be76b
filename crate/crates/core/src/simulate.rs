//! Synthetic retina phantoms and ground-truth motion injection.
//!
//! A phantom is a smooth layered slab between an ILM and an RPE surface, with
//! dark vessel tubes just below the ILM. Motion is injected as an integer axial
//! shift per A-scan (a detilted random walk across B-scans plus a linear ramp
//! across the fast axis) and an integer lateral shift per B-scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::volume::{
    shift_ascans, shift_bscans, Boundaries, VesselKind, VesselMap, Volume, VolumeGeometry,
    XDisplacementVec, ZDisplacementMap,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub slices: usize,
    /// Number of intensity bands between ILM and RPE.
    pub layers: usize,
    /// Depth difference (px) between RPE center and edges of the bowl.
    pub curvature_px: f64,
    pub vessel_count: usize,
    pub vessel_width_px: f64,
    /// Additive Gaussian noise, standard deviation `0.25 * noise`.
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub geometry: Option<VolumeGeometry>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            slices: 24,
            layers: 4,
            curvature_px: 6.0,
            vessel_count: 6,
            vessel_width_px: 3.0,
            noise: 0.1,
            seed: 0,
            geometry: None,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 || self.slices < 8 {
            return dim_err(format!(
                "phantom dims must be at least 16x16x8, got {}x{}x{}",
                self.height, self.width, self.slices
            ));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return arg_err(format!("noise level {} outside [0, 1)", self.noise));
        }
        if !(self.curvature_px.is_finite() && self.curvature_px >= 0.0) {
            return arg_err("curvature amplitude must be non-negative");
        }
        if self.vessel_count > 0 && !(self.vessel_width_px > 0.0) {
            return arg_err("vessel width must be positive");
        }
        if let Some(g) = self.geometry {
            g.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub boundaries: Boundaries,
    pub vessels: VesselMap,
}

fn smooth_step(d: f64) -> f64 {
    // 0 well above the surface, 1 well below, ~half a pixel of transition
    1.0 / (1.0 + (-2.0 * d).exp())
}

struct VesselPath {
    x0: f64,
    slope: f64,
    amp: f64,
    period: f64,
    phase: f64,
}

impl VesselPath {
    fn center(&self, y: f64) -> f64 {
        self.x0 + self.slope * y + self.amp * (std::f64::consts::TAU * y / self.period + self.phase).sin()
    }
}

pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let (h, w, n) = (cfg.height, cfg.width, cfg.slices);
    let hf = h as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let amp = cfg.curvature_px * rng.gen_range(0.8..1.2);
    let (cu, cv) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let z0 = hf * rng.gen_range(0.62..0.68);
    let (tilt_u, tilt_v) = (hf * rng.gen_range(-0.04..0.04), hf * rng.gen_range(-0.04..0.04));
    let ripples: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.03..0.08),
            )
        })
        .collect();
    let thickness = 0.25 * hf;
    let pit_depth = rng.gen_range(0.3..0.5);

    let mut ilm = vec![0.0; w * n];
    let mut rpe = vec![0.0; w * n];
    for y in 0..n {
        let v = y as f64 / (n - 1) as f64 - 0.5;
        for x in 0..w {
            let u = x as f64 / (w - 1) as f64 - 0.5;
            let r2 = (u - cu).powi(2) + (v - cv).powi(2);
            let ripple: f64 = ripples
                .iter()
                .map(|(fu, fv, ph, a)| a * (std::f64::consts::TAU * (fu * u + fv * v) + ph).sin())
                .sum();
            let z = z0 - amp * (4.0 * r2 - ripple) + tilt_u * u + tilt_v * v;
            let z = z.clamp(thickness + 2.0, hf - 4.0);
            let t = thickness * (1.0 - pit_depth * (-r2 / (2.0 * 0.12f64.powi(2))).exp());
            rpe[y * w + x] = z;
            ilm[y * w + x] = (z - t).clamp(1.0, z);
        }
    }

    let paths: Vec<VesselPath> = (0..cfg.vessel_count)
        .map(|_| VesselPath {
            x0: rng.gen_range(0.08..0.92) * w as f64,
            slope: rng.gen_range(-0.6..0.6) * w as f64 / (4.0 * n as f64),
            amp: rng.gen_range(0.0..0.04) * w as f64,
            period: rng.gen_range(0.8..2.0) * n as f64,
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let mut mask = vec![0.0; w * n];
    for y in 0..n {
        for p in &paths {
            let c = p.center(y as f64);
            for (x, m) in mask[y * w..(y + 1) * w].iter_mut().enumerate() {
                if (x as f64 - c).abs() <= cfg.vessel_width_px / 2.0 {
                    *m = 1.0;
                }
            }
        }
    }

    let layers = cfg.layers.max(1);
    let band_level: Vec<f64> =
        (0..layers).map(|i| if i == 0 { 0.62 } else if i % 2 == 1 { 0.32 } else { 0.48 }).collect();
    let tube_depth = (0.6 * cfg.vessel_width_px).max(2.0);
    let sigma = 0.25 * cfg.noise;
    let mut data = vec![0.0f32; h * w * n];
    for y in 0..n {
        for x in 0..w {
            let (zi, zr) = (ilm[y * w + x], rpe[y * w + x]);
            let vessel = mask[y * w + x] > 0.0;
            let col = &mut data[(y * w + x) * h..(y * w + x + 1) * h];
            for (z, out) in col.iter_mut().enumerate() {
                let zf = z as f64;
                let inside = smooth_step(zf - zi) * (1.0 - smooth_step(zf - zr));
                let frac = ((zf - zi) / (zr - zi).max(1.0)).clamp(0.0, 0.999);
                let band = band_level[(frac * layers as f64) as usize];
                let rpe_band = (-((zf - zr) / 1.5).powi(2)).exp();
                let choroid = smooth_step(zf - zr) * (0.05 + 0.45 * (-(zf - zr).max(0.0) / (0.1 * hf)).exp());
                let mut val = 0.05 * (1.0 - inside) + band * inside + 0.85 * rpe_band + choroid;
                if vessel {
                    let depth = zf - zi;
                    if depth >= 1.0 && depth <= 1.0 + tube_depth {
                        val *= 0.25;
                    } else if depth > 1.0 + tube_depth && zf < zr - 2.0 {
                        val *= 0.7;
                    }
                }
                if sigma > 0.0 {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    val += sigma * e;
                }
                *out = val.clamp(0.0, 1.0) as f32;
            }
        }
    }

    let mut z = ilm;
    z.extend(rpe);
    Ok(Phantom {
        volume: Volume::new(h, w, n, data, cfg.geometry.unwrap_or_default())?,
        boundaries: Boundaries::new(h, w, n, z)?,
        vessels: VesselMap::new(w, n, mask, VesselKind::Binary)?,
    })
}

/// Detilted cumulative walk: `d(n) = sum_{k=1..n} g_k - n/(N-1) * sum_{k=1..N-1} g_k`.
///
/// `g_0` is drawn but never enters the walk; both endpoints are exactly zero.
pub fn detilted_walk(g: &[f64]) -> Vec<f64> {
    let n = g.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut partial = vec![0.0; n];
    for k in 1..n {
        partial[k] = partial[k - 1] + g[k];
    }
    let total = partial[n - 1];
    let mut out: Vec<f64> =
        (0..n).map(|i| partial[i] - i as f64 / (n - 1) as f64 * total).collect();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    out
}

/// Axial and coronal motion injected into one volume, all in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    /// Axial walk across B-scans, length `N`.
    pub delta_y: Vec<f64>,
    /// Axial ramp across the fast axis, length `W`.
    pub delta_x: Vec<f64>,
    /// Lateral shift of each B-scan, length `N`.
    pub x_shift: Vec<i64>,
}

impl MotionSample {
    pub fn zero(width: usize, slices: usize) -> Self {
        Self { delta_y: vec![0.0; slices], delta_x: vec![0.0; width], x_shift: vec![0; slices] }
    }

    pub fn width(&self) -> usize {
        self.delta_x.len()
    }

    pub fn slices(&self) -> usize {
        self.delta_y.len()
    }

    /// `delta = 1_W delta_y^T + delta_x 1_N^T`, index `y * W + x`.
    pub fn delta_total(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width() * self.slices());
        for dy in &self.delta_y {
            out.extend(self.delta_x.iter().map(|dx| dy + dx));
        }
        out
    }

    /// Rounds both axial components to whole pixels.
    pub fn quantized(&self) -> Self {
        Self {
            delta_y: self.delta_y.iter().map(|v| v.round()).collect(),
            delta_x: self.delta_x.iter().map(|v| v.round()).collect(),
            x_shift: self.x_shift.clone(),
        }
    }
}

/// Motion amplitudes for [`sample_motion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub sigma_y: f64,
    pub sigma_x: f64,
    pub x_mean_abs: f64,
    pub x_max_abs: u32,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { sigma_y: 1.0, sigma_x: 1.0, x_mean_abs: 0.96, x_max_abs: 5 }
    }
}

/// `(delta_y, delta_x)` for one volume.
pub fn sample_axial_motion(
    seed: u64,
    slices: usize,
    width: usize,
    sigma_y: f64,
    sigma_x: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if slices < 2 || width < 2 {
        return dim_err("axial motion needs N >= 2 and W >= 2");
    }
    if !(sigma_y >= 0.0 && sigma_x >= 0.0) {
        return arg_err("motion sigmas must be non-negative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<f64> = (0..slices)
        .map(|_| sigma_y * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let end: f64 = sigma_x * rng.sample::<f64, _>(StandardNormal);
    let delta_x = (0..width).map(|x| end * x as f64 / (width - 1) as f64).collect();
    Ok((detilted_walk(&g), delta_x))
}

/// Expected `|k|` of the discrete Laplace law `P(k) ∝ exp(-|k|/b)` on `[-max, max]`.
fn laplace_mean_abs(b: f64, max: u32) -> f64 {
    let (mut num, mut den) = (0.0, 1.0);
    for k in 1..=max {
        let p = (-(k as f64) / b).exp();
        num += 2.0 * k as f64 * p;
        den += 2.0 * p;
    }
    num / den
}

/// Integer lateral shifts from a clipped discrete Laplace law with `E|k| = mean_abs`.
pub fn sample_x_motion(seed: u64, slices: usize, mean_abs: f64, max_abs: u32) -> Result<Vec<i64>> {
    if max_abs == 0 {
        return Ok(vec![0; slices]);
    }
    if !(mean_abs > 0.0 && mean_abs <= max_abs as f64) {
        return arg_err(format!("need 0 < mean_abs <= max_abs, got {mean_abs} and {max_abs}"));
    }
    // mean |k| is increasing in b; bisect in log space
    let (mut lo, mut hi) = (1e-3f64, 1e6f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if laplace_mean_abs(mid, max_abs) < mean_abs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = (lo * hi).sqrt();
    let support: Vec<i64> = (-(max_abs as i64)..=max_abs as i64).collect();
    let weights: Vec<f64> = support.iter().map(|k| (-(k.abs() as f64) / b).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..slices)
        .map(|_| {
            let mut u = rng.gen::<f64>() * total;
            for (k, wgt) in support.iter().zip(&weights) {
                if u < *wgt {
                    return *k;
                }
                u -= wgt;
            }
            *support.last().unwrap()
        })
        .collect())
}

/// Axial and lateral motion for one volume; the two parts use independent sub-streams of `seed`.
pub fn sample_motion(seed: u64, width: usize, slices: usize, cfg: &MotionConfig) -> Result<MotionSample> {
    let (delta_y, delta_x) =
        sample_axial_motion(seed.wrapping_mul(2).wrapping_add(1), slices, width, cfg.sigma_y, cfg.sigma_x)?;
    let x_shift = if cfg.x_max_abs == 0 || cfg.x_mean_abs == 0.0 {
        vec![0; slices]
    } else {
        sample_x_motion(seed.wrapping_mul(2).wrapping_add(2), slices, cfg.x_mean_abs, cfg.x_max_abs)?
    };
    Ok(MotionSample { delta_y, delta_x, x_shift })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub volume: Volume,
    pub boundaries: Boundaries,
    /// Undoes the axial walk only; the fast-axis ramp is left to tilt correction.
    pub gt_z: ZDisplacementMap,
    pub gt_x: XDisplacementVec,
}

/// Corrupts `(v, b)` with the integer-rounded motion `m`.
///
/// Lateral shifts are applied first, then axial ones, so correcting Z then X
/// inverts the injection.
pub fn inject_motion(
    v: &Volume,
    b: &Boundaries,
    m: &MotionSample,
    z_norm: f64,
    x_norm: f64,
) -> Result<Injected> {
    let (h, w, n) = v.dims();
    if (b.height(), b.width(), b.slices()) != (h, w, n) {
        return dim_err("boundaries do not match the volume");
    }
    if m.width() != w || m.slices() != n || m.x_shift.len() != n {
        return dim_err("motion sample does not match the volume");
    }
    if !(z_norm > 0.0 && x_norm > 0.0) {
        return arg_err("normalization factors must be positive");
    }
    let q = m.quantized();
    let total = q.delta_total();
    let axial: Vec<i64> = total.iter().map(|&d| d as i64).collect();

    let shifted = shift_bscans(v, &q.x_shift, 0.0)?;
    let volume = shift_ascans(&shifted, &axial, 0.0)?;
    let boundaries = b.shifted_x(&q.x_shift)?.shifted_z(|x, y| total[y * w + x]);

    let gt_profile: Vec<f64> = q.delta_y.iter().map(|d| -d / z_norm).collect();
    let gt_z = ZDisplacementMap::from_slice_profile(w, &gt_profile)?;
    let gt_x = XDisplacementVec::new(q.x_shift.iter().map(|&s| -(s as f64) / x_norm).collect())?;
    Ok(Injected { volume, boundaries, gt_z, gt_x })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipAxis {
    X,
    Y,
}

/// Reverses a `W x N` map (`y * W + x`) along one axis.
pub fn flip_map(values: &[f64], width: usize, slices: usize, axis: FlipAxis) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for y in 0..slices {
        for x in 0..width {
            let (sx, sy) = match axis {
                FlipAxis::X => (width - 1 - x, y),
                FlipAxis::Y => (x, slices - 1 - y),
            };
            out[y * width + x] = values[sy * width + sx];
        }
    }
    out
}

pub fn flip_volume(v: &Volume, axis: FlipAxis) -> Volume {
    let (h, w, n) = v.dims();
    let mut data = Vec::with_capacity(h * w * n);
    for y in 0..n {
        for x in 0..w {
            let (sx, sy) = match axis {
                FlipAxis::X => (w - 1 - x, y),
                FlipAxis::Y => (x, n - 1 - y),
            };
            data.extend_from_slice(v.ascan(sx, sy));
        }
    }
    Volume::new(h, w, n, data, v.geometry()).expect("flip preserves validity")
}

pub fn flip_boundaries(b: &Boundaries, axis: FlipAxis) -> Boundaries {
    let (w, n) = (b.width(), b.slices());
    let mut z = flip_map(b.surface(0), w, n, axis);
    z.extend(flip_map(b.surface(1), w, n, axis));
    Boundaries::new(b.height(), w, n, z).expect("flip preserves validity")
}

/// Flips volume, boundaries and axial ground truth consistently.
pub fn flip_augment(
    v: &Volume,
    b: &Boundaries,
    gt_z: &ZDisplacementMap,
    axis: FlipAxis,
) -> (Volume, Boundaries, ZDisplacementMap) {
    let d = ZDisplacementMap::new(
        gt_z.width(),
        gt_z.slices(),
        flip_map(gt_z.values(), gt_z.width(), gt_z.slices(), axis),
    )
    .expect("flip preserves validity");
    (flip_volume(v, axis), flip_boundaries(b, axis), d)
}

/// Independent fair coin per axis.
pub fn random_flips(seed: u64) -> Vec<FlipAxis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [FlipAxis::X, FlipAxis::Y].into_iter().filter(|_| rng.gen_bool(0.5)).collect()
}
