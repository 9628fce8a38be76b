//! Volumetric data model and rigid A-scan / B-scan displacement.
//!
//! Axes follow the scan geometry: `z` is depth (`0..H`), `x` is the fast
//! scanning axis (`0..W`) and `y` indexes B-scans (`0..N`). Volume samples are
//! stored z-contiguous, so every A-scan is one contiguous slice.
//!
//! Displacements are kept in normalized units. The pixel shift applied to an
//! A-scan (or a whole B-scan) is `int(norm * value)`, see [`pixel_shift`].

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};

/// Out-of-range samples are filled with this value unless the caller asks otherwise.
pub const DEFAULT_FILL: f32 = 0.0;

/// Distance from an integer below which a scaled displacement is taken to be that integer.
///
/// Normalized maps written as `f32` do not scale back to exact integers, e.g.
/// `0.7f32 as f64 * 10.0 = 6.99999988`.
pub const INTEGER_SNAP: f64 = 1e-4;

/// Physical extent of the scanned volume in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    pub extent_z_mm: f64,
    pub extent_x_mm: f64,
    pub extent_y_mm: f64,
}

impl Default for VolumeGeometry {
    fn default() -> Self {
        Self { extent_z_mm: 1.9, extent_x_mm: 5.8, extent_y_mm: 5.8 }
    }
}

impl VolumeGeometry {
    pub fn new(extent_z_mm: f64, extent_x_mm: f64, extent_y_mm: f64) -> Result<Self> {
        let g = Self { extent_z_mm, extent_x_mm, extent_y_mm };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for e in [self.extent_z_mm, self.extent_x_mm, self.extent_y_mm] {
            if !(e.is_finite() && e > 0.0) {
                return arg_err(format!("volume extents must be positive, got {e}"));
            }
        }
        Ok(())
    }
}

/// An `H x W x N` scalar volume, one A-scan per `(x, y)` column.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    height: usize,
    width: usize,
    slices: usize,
    data: Vec<f32>,
    geometry: VolumeGeometry,
}

impl Volume {
    pub fn new(
        height: usize,
        width: usize,
        slices: usize,
        data: Vec<f32>,
        geometry: VolumeGeometry,
    ) -> Result<Self> {
        if height < 2 || width < 2 || slices < 2 {
            return dim_err(format!("volume dims must be >= 2, got {height}x{width}x{slices}"));
        }
        if data.len() != height * width * slices {
            return dim_err(format!(
                "volume data length {} does not match {height}x{width}x{slices}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume"));
        }
        geometry.validate()?;
        Ok(Self { height, width, slices, data, geometry })
    }

    pub fn filled(height: usize, width: usize, slices: usize, value: f32) -> Result<Self> {
        Self::new(
            height,
            width,
            slices,
            vec![value; height * width * slices],
            VolumeGeometry::default(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    /// `(H, W, N)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.slices)
    }

    pub fn geometry(&self) -> VolumeGeometry {
        self.geometry
    }

    pub fn with_geometry(mut self, geometry: VolumeGeometry) -> Result<Self> {
        geometry.validate()?;
        self.geometry = geometry;
        Ok(self)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, z: usize, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.height + z
    }

    #[inline]
    pub fn get(&self, z: usize, x: usize, y: usize) -> f32 {
        self.data[self.index(z, x, y)]
    }

    pub fn set(&mut self, z: usize, x: usize, y: usize, value: f32) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("volume"));
        }
        let i = self.index(z, x, y);
        self.data[i] = value;
        Ok(())
    }

    pub fn ascan(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.height;
        &self.data[start..start + self.height]
    }

    /// B-scan `y` as an `H x W` row-major image.
    pub fn bscan(&self, y: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.height * self.width];
        for x in 0..self.width {
            for (z, v) in self.ascan(x, y).iter().enumerate() {
                out[z * self.width + x] = *v;
            }
        }
        out
    }

    /// Cross-section along the slow axis at column `x`, as an `H x N` image.
    pub fn cross_section(&self, x: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.height * self.slices];
        for y in 0..self.slices {
            for (z, v) in self.ascan(x, y).iter().enumerate() {
                out[z * self.slices + y] = *v;
            }
        }
        out
    }

    /// Mean over depth of every A-scan, `W x N` with index `y * W + x`.
    pub fn enface_projection(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.slices];
        for y in 0..self.slices {
            for x in 0..self.width {
                let s: f64 = self.ascan(x, y).iter().map(|&v| v as f64).sum();
                out[y * self.width + x] = s / self.height as f64;
            }
        }
        out
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        Err(Error::NonFinite(what))
    } else {
        Ok(())
    }
}

/// Normalized axial displacement per A-scan, `W x N`, index `y * W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZDisplacementMap {
    width: usize,
    slices: usize,
    values: Vec<f64>,
}

impl ZDisplacementMap {
    pub fn new(width: usize, slices: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * slices || width == 0 || slices == 0 {
            return dim_err(format!(
                "displacement map of {} values cannot be {width}x{slices}",
                values.len()
            ));
        }
        check_finite(&values, "z displacement")?;
        Ok(Self { width, slices, values })
    }

    pub fn zeros(width: usize, slices: usize) -> Self {
        Self { width, slices, values: vec![0.0; width * slices] }
    }

    /// Map constant along `x`: `d(x, y) = per_slice[y]`.
    pub fn from_slice_profile(width: usize, per_slice: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(width * per_slice.len());
        for &v in per_slice {
            values.extend(std::iter::repeat(v).take(width));
        }
        Self::new(width, per_slice.len(), values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// One B-scan's row of displacements.
    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.width, self.slices, self.values.iter().map(|v| v * factor).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.width, self.slices) != (other.width, other.slices) {
            return dim_err("cannot add displacement maps of different shapes");
        }
        Self::new(
            self.width,
            self.slices,
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        )
    }
}

/// Normalized coronal displacement per B-scan, length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct XDisplacementVec {
    values: Vec<f64>,
}

impl XDisplacementVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return dim_err("x displacement vector is empty");
        }
        check_finite(&values, "x displacement")?;
        Ok(Self { values })
    }

    pub fn zeros(slices: usize) -> Self {
        Self { values: vec![0.0; slices] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Integer pixel shifts `int(x_norm * d(y))`.
    pub fn pixel_shifts(&self, x_norm: f64) -> Vec<i64> {
        self.values.iter().map(|&v| pixel_shift(v, x_norm)).collect()
    }
}

/// Surface index of the inner limiting membrane.
pub const ILM: usize = 0;
/// Surface index of the retinal pigment epithelium.
pub const RPE: usize = 1;

/// Z coordinates of the ILM and RPE surfaces, `2 x W x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundaries {
    height: usize,
    width: usize,
    slices: usize,
    z: Vec<f64>,
}

impl Boundaries {
    /// `z` is laid out as `surface * W * N + y * W + x`.
    pub fn new(height: usize, width: usize, slices: usize, z: Vec<f64>) -> Result<Self> {
        if z.len() != 2 * width * slices {
            return dim_err(format!(
                "boundary stack of {} values cannot be 2x{width}x{slices}",
                z.len()
            ));
        }
        check_finite(&z, "boundaries")?;
        let hmax = (height as f64) - 1.0;
        let plane = width * slices;
        for i in 0..plane {
            let (ilm, rpe) = (z[i], z[plane + i]);
            if ilm < 0.0 || rpe < 0.0 || ilm > hmax || rpe > hmax {
                return arg_err(format!("boundary outside [0, {hmax}]: ilm={ilm}, rpe={rpe}"));
            }
            if ilm > rpe {
                return arg_err(format!("ILM below RPE at column {i}: {ilm} > {rpe}"));
            }
        }
        Ok(Self { height, width, slices, z })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    #[inline]
    pub fn get(&self, surface: usize, x: usize, y: usize) -> f64 {
        self.z[(surface * self.slices + y) * self.width + x]
    }

    pub fn surface(&self, surface: usize) -> &[f64] {
        let plane = self.width * self.slices;
        &self.z[surface * plane..(surface + 1) * plane]
    }

    /// Adds `offset(x, y)` (pixels) to both surfaces, clamping to `[0, H-1]`.
    pub fn shifted_z(&self, offset: impl Fn(usize, usize) -> f64) -> Self {
        let hmax = self.height as f64 - 1.0;
        let mut z = self.z.clone();
        for s in 0..2 {
            for y in 0..self.slices {
                for x in 0..self.width {
                    let i = (s * self.slices + y) * self.width + x;
                    z[i] = (z[i] + offset(x, y)).clamp(0.0, hmax);
                }
            }
        }
        Self { z, ..self.clone() }
    }

    /// Shifts every B-scan's boundaries along `x` by `shifts[y]` pixels,
    /// replicating the edge value into vacated columns.
    pub fn shifted_x(&self, shifts: &[i64]) -> Result<Self> {
        if shifts.len() != self.slices {
            return dim_err("x shift count does not match boundary slices");
        }
        let w = self.width as i64;
        let mut z = self.z.clone();
        for s in 0..2 {
            for (y, &k) in shifts.iter().enumerate() {
                for x in 0..self.width {
                    let src = (x as i64 - k).clamp(0, w - 1) as usize;
                    z[(s * self.slices + y) * self.width + x] = self.get(s, src, y);
                }
            }
        }
        Ok(Self { z, ..self.clone() })
    }
}

/// Kind of values carried by a [`VesselMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselKind {
    /// Vesselness in `[0, 1]`.
    Probability,
    /// Values in `{0, 1}`.
    Binary,
    /// Unbounded network logits.
    Logits,
}

/// En-face vessel map, `W x N`, index `y * W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselMap {
    width: usize,
    slices: usize,
    values: Vec<f64>,
    kind: VesselKind,
}

impl VesselMap {
    pub fn new(width: usize, slices: usize, values: Vec<f64>, kind: VesselKind) -> Result<Self> {
        if values.len() != width * slices || width == 0 || slices == 0 {
            return dim_err(format!("vessel map of {} values cannot be {width}x{slices}", values.len()));
        }
        check_finite(&values, "vessel map")?;
        let ok = match kind {
            VesselKind::Probability => values.iter().all(|v| (0.0..=1.0).contains(v)),
            VesselKind::Binary => values.iter().all(|&v| v == 0.0 || v == 1.0),
            VesselKind::Logits => true,
        };
        if !ok {
            return arg_err(format!("vessel map values violate the {kind:?} range"));
        }
        Ok(Self { width, slices, values, kind })
    }

    pub fn zeros(width: usize, slices: usize, kind: VesselKind) -> Self {
        Self { width, slices, values: vec![0.0; width * slices], kind }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn kind(&self) -> VesselKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Elementwise logistic function of a logit map.
    pub fn sigmoid(&self) -> Result<Self> {
        if self.kind != VesselKind::Logits {
            return arg_err("sigmoid expects a logit map");
        }
        let values = self.values.iter().map(|&l| crate::train::sigmoid(l)).collect();
        Self::new(self.width, self.slices, values, VesselKind::Probability)
    }

    /// Shifts each row `y` by `shifts[y]` pixels along `x`, filling with zero.
    pub fn shifted_x(&self, shifts: &[i64]) -> Result<Self> {
        if shifts.len() != self.slices {
            return dim_err("x shift count does not match vessel map slices");
        }
        Ok(Self { values: shift_rows(&self.values, self.width, shifts, 0.0), ..self.clone() })
    }
}

/// Shifts the rows of a `W x N` map (`y * W + x`) along `x`.
pub fn shift_rows(values: &[f64], width: usize, shifts: &[i64], fill: f64) -> Vec<f64> {
    let mut out = vec![fill; values.len()];
    for (y, &k) in shifts.iter().enumerate() {
        for x in 0..width {
            let src = x as i64 - k;
            if src >= 0 && (src as usize) < width {
                out[y * width + x] = values[y * width + src as usize];
            }
        }
    }
    out
}

/// Integer conversion of a normalized displacement: `int(norm * value)`.
///
/// Truncates toward zero, except that products within [`INTEGER_SNAP`] of an
/// integer are rounded to it.
#[inline]
pub fn pixel_shift(value: f64, norm: f64) -> i64 {
    let s = norm * value;
    let r = s.round();
    if (s - r).abs() < INTEGER_SNAP {
        r as i64
    } else {
        s.trunc() as i64
    }
}

fn check_norm(norm: f64, name: &str) -> Result<()> {
    if !(norm.is_finite() && norm > 0.0) {
        return arg_err(format!("{name} must be positive, got {norm}"));
    }
    Ok(())
}

/// Shifts every A-scan by an integer number of pixels: `out(z) = v(z - k(x, y))`.
pub fn shift_ascans(v: &Volume, shifts: &[i64], fill: f32) -> Result<Volume> {
    let (h, w, n) = v.dims();
    if shifts.len() != w * n {
        return dim_err(format!("{} shifts for {w}x{n} A-scans", shifts.len()));
    }
    let mut out = vec![fill; v.data.len()];
    for (col, &k) in shifts.iter().enumerate() {
        let src = &v.data[col * h..(col + 1) * h];
        let dst = &mut out[col * h..(col + 1) * h];
        // destination rows z with 0 <= z - k < h
        let lo = k.max(0).min(h as i64) as usize;
        let hi = (h as i64 + k).clamp(0, h as i64) as usize;
        if lo < hi {
            let s0 = (lo as i64 - k) as usize;
            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
        }
    }
    Ok(Volume { data: out, ..v.clone() })
}

/// Shifts every B-scan rigidly along `x`: `out(z, x, y) = v(z, x - k(y), y)`.
pub fn shift_bscans(v: &Volume, shifts: &[i64], fill: f32) -> Result<Volume> {
    let (h, w, n) = v.dims();
    if shifts.len() != n {
        return dim_err(format!("{} shifts for {n} B-scans", shifts.len()));
    }
    let mut out = vec![fill; v.data.len()];
    for (y, &k) in shifts.iter().enumerate() {
        for x in 0..w {
            let src = x as i64 - k;
            if src < 0 || src >= w as i64 {
                continue;
            }
            let d0 = (y * w + x) * h;
            let s0 = (y * w + src as usize) * h;
            out[d0..d0 + h].copy_from_slice(&v.data[s0..s0 + h]);
        }
    }
    Ok(Volume { data: out, ..v.clone() })
}

/// `V_dz(z, x, y) = V(z - int(z_norm * D_z(x, y)), x, y)`.
pub fn apply_z_displacement(
    v: &Volume,
    d: &ZDisplacementMap,
    z_norm: f64,
    fill: f32,
) -> Result<Volume> {
    check_norm(z_norm, "z_norm")?;
    if (d.width, d.slices) != (v.width, v.slices) {
        return dim_err(format!(
            "displacement map {}x{} does not match volume {}x{}",
            d.width, d.slices, v.width, v.slices
        ));
    }
    let shifts: Vec<i64> = d.values.iter().map(|&s| pixel_shift(s, z_norm)).collect();
    shift_ascans(v, &shifts, fill)
}

/// `V_dx(z, x, y) = V(z, x - int(x_norm * D_x(y)), y)`.
pub fn apply_x_displacement(
    v: &Volume,
    d: &XDisplacementVec,
    x_norm: f64,
    fill: f32,
) -> Result<Volume> {
    check_norm(x_norm, "x_norm")?;
    if d.len() != v.slices {
        return dim_err(format!("x displacement of length {} for {} B-scans", d.len(), v.slices));
    }
    shift_bscans(v, &d.pixel_shifts(x_norm), fill)
}

/// Normalized boundary stack `B' = (T - B) / z_norm`, same layout as [`Boundaries`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedBoundaries {
    pub width: usize,
    pub slices: usize,
    pub values: Vec<f64>,
}

/// Retinal tilt `T(s, x, y)`: per-column linear interpolation between the
/// first and last B-scan.
pub fn boundary_tilt(b: &Boundaries) -> Result<Vec<f64>> {
    let (w, n) = (b.width, b.slices);
    if n < 2 {
        return dim_err("tilt needs at least two B-scans");
    }
    let mut t = vec![0.0; 2 * w * n];
    let last = (n - 1) as f64;
    for s in 0..2 {
        for x in 0..w {
            let first = b.get(s, x, 0);
            let end = b.get(s, x, n - 1);
            for y in 0..n {
                t[(s * n + y) * w + x] = first + (end - first) * y as f64 / last;
            }
        }
    }
    Ok(t)
}

pub fn normalize_boundaries(b: &Boundaries, z_norm: f64) -> Result<NormalizedBoundaries> {
    check_norm(z_norm, "z_norm")?;
    let t = boundary_tilt(b)?;
    let values = t.iter().zip(&b.z).map(|(t, b)| (t - b) / z_norm).collect();
    Ok(NormalizedBoundaries { width: b.width, slices: b.slices, values })
}

/// `out(x, y) = 1` iff `m(x, y) >= threshold`.
pub fn binarize(m: &VesselMap, threshold: f64) -> Result<VesselMap> {
    if !(0.0..=1.0).contains(&threshold) {
        return arg_err(format!("threshold {threshold} outside [0, 1]"));
    }
    if m.kind == VesselKind::Logits {
        return arg_err("binarize expects a probability map, got logits");
    }
    let values = m.values.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect();
    VesselMap::new(m.width, m.slices, values, VesselKind::Binary)
}
