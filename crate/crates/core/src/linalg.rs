//! Closed-form least-squares utilities.
//!
//! * per-B-scan line fits of a displacement map along the fast axis,
//! * quartic fits of a boundary profile and the arc length of the fitted curve,
//! * the bilinear corner-based tilt displacement.

use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::volume::{Boundaries, ZDisplacementMap, RPE};

/// Polyline supersampling factor used by [`poly_arclength`].
pub const ARC_SUPERSAMPLING: usize = 8;

/// Per-B-scan line parameters: `beta[y] = (slope, intercept)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    pub beta: Vec<[f64; 2]>,
}

impl LineFit {
    /// `X beta(y)` for abscissae `0..width`.
    pub fn evaluate(&self, width: usize) -> Result<ZDisplacementMap> {
        let mut values = Vec::with_capacity(width * self.beta.len());
        for [slope, intercept] in &self.beta {
            values.extend((0..width).map(|x| slope * x as f64 + intercept));
        }
        ZDisplacementMap::new(width, self.beta.len(), values)
    }
}

/// Least-squares line through each B-scan row of `d`, abscissae `0..W`.
pub fn ls_line_fit(d: &ZDisplacementMap) -> Result<LineFit> {
    let w = d.width();
    if w < 2 {
        return dim_err("line fit needs at least two samples per B-scan");
    }
    // centered abscissae make the 2x2 normal equations diagonal
    let xbar = (w - 1) as f64 / 2.0;
    let sxx: f64 = (0..w).map(|x| (x as f64 - xbar).powi(2)).sum();
    let beta = (0..d.slices())
        .map(|y| {
            let row = d.row(y);
            let mean = row.iter().sum::<f64>() / w as f64;
            let sxy: f64 = row.iter().enumerate().map(|(x, v)| (x as f64 - xbar) * (v - mean)).sum();
            let slope = sxy / sxx;
            [slope, mean - slope * xbar]
        })
        .collect();
    Ok(LineFit { beta })
}

/// Orthogonal projection of every B-scan row onto lines: `X (X^T X)^-1 X^T d(y)`.
pub fn ls_line_project(d: &ZDisplacementMap) -> Result<ZDisplacementMap> {
    ls_line_fit(d)?.evaluate(d.width())
}

/// Quartic polynomial, ascending coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Poly4 {
    pub coeffs: [f64; 5],
}

impl Poly4 {
    pub fn eval(&self, k: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * k + c)
    }

    pub fn residual_sq(&self, samples: &[f64]) -> f64 {
        samples.iter().enumerate().map(|(k, z)| (z - self.eval(k as f64)).powi(2)).sum()
    }
}

/// Least-squares quartic through `(k, samples[k])`, solved by QR on abscissae scaled to `[0, 1]`.
pub fn poly4_fit(samples: &[f64]) -> Result<Poly4> {
    let k = samples.len();
    if k < 5 {
        return arg_err(format!("quartic fit needs at least 5 samples, got {k}"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit samples"));
    }
    let scale = (k - 1) as f64;
    let a = DMatrix::from_fn(k, 5, |r, c| (r as f64 / scale).powi(c as i32));
    let b = DVector::from_column_slice(samples);
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let c = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Degenerate("singular Vandermonde factor".into()))?;
    let mut coeffs = [0.0; 5];
    for (j, out) in coeffs.iter_mut().enumerate() {
        *out = c[j] / scale.powi(j as i32);
    }
    Ok(Poly4 { coeffs })
}

/// Physical length of `k -> (h_scale * k, z_scale * p(k))` over `[0, k_max]`,
/// summed as a polyline with [`ARC_SUPERSAMPLING`] points per unit step.
pub fn poly_arclength(p: &Poly4, k_max: usize, z_scale: f64, h_scale: f64) -> Result<f64> {
    if k_max < 1 {
        return arg_err("arc length needs k_max >= 1");
    }
    let steps = ARC_SUPERSAMPLING * k_max;
    let dk = 1.0 / ARC_SUPERSAMPLING as f64;
    let dx = h_scale * dk;
    let mut prev = p.eval(0.0);
    let mut len = 0.0;
    for i in 1..=steps {
        let z = p.eval(i as f64 * dk);
        len += dx.hypot(z_scale * (z - prev));
        prev = z;
    }
    Ok(len)
}

/// Straight-line distance between the curve's endpoints in the same physical units.
pub fn poly_chord(p: &Poly4, k_max: usize, z_scale: f64, h_scale: f64) -> f64 {
    let rise = p.eval(k_max as f64) - p.eval(0.0);
    (h_scale * k_max as f64).hypot(z_scale * rise)
}

/// `D_tilt(x, y) = h_ref - bilinear(RPE corners)(x, y)`, in pixels.
pub fn tilt_displacement(b: &Boundaries, h_ref: f64) -> Result<ZDisplacementMap> {
    let (w, n) = (b.width(), b.slices());
    if w < 2 || n < 2 {
        return dim_err("tilt correction needs W, N >= 2");
    }
    let (wl, nl) = ((w - 1) as f64, (n - 1) as f64);
    let c00 = b.get(RPE, 0, 0);
    let c10 = b.get(RPE, w - 1, 0);
    let c01 = b.get(RPE, 0, n - 1);
    let c11 = b.get(RPE, w - 1, n - 1);
    let mut values = Vec::with_capacity(w * n);
    for y in 0..n {
        let yf = y as f64;
        for x in 0..w {
            let xf = x as f64;
            let plane = (c00 * (wl - xf) * (nl - yf)
                + c10 * (nl - yf) * xf
                + c01 * (wl - xf) * yf
                + c11 * xf * yf)
                / (wl * nl);
            values.push(h_ref - plane);
        }
    }
    ZDisplacementMap::new(w, n, values)
}
