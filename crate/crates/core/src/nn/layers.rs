//! Raw layer kernels with explicit backward passes.
//!
//! Convolutions lower to GEMM through an index table (im2col). Weights for a
//! convolution are `[out, in, kh, kw]`; a transposed convolution reads the same
//! layout as `[in, out, kh, kw]`, so a shared weight tensor makes the two ops
//! adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::nn::tensor::Tensor4;

pub const IN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding ("valid" convolution).
    None,
    /// Mirror without repeating the edge sample.
    Reflect,
    /// Periodic wrap-around.
    Circular,
}

impl Padding {
    fn pads(self, k: usize) -> (usize, usize) {
        match self {
            Padding::None => (0, 0),
            _ => ((k - 1) / 2, k - 1 - (k - 1) / 2),
        }
    }

    fn resolve(self, i: isize, n: usize) -> usize {
        let n = n as isize;
        match self {
            Padding::None => i as usize,
            Padding::Circular => i.rem_euclid(n) as usize,
            Padding::Reflect => {
                if n == 1 {
                    return 0;
                }
                let period = 2 * (n - 1);
                let m = i.rem_euclid(period);
                (if m < n { m } else { period - m }) as usize
            }
        }
    }
}

/// Gather table mapping (kernel tap, output position) to an input plane offset.
#[derive(Debug, Clone)]
pub(crate) struct ConvPlan {
    pub in_plane: usize,
    pub out_a: usize,
    pub out_s: usize,
    pub taps: usize,
    src: Vec<usize>,
    identity: bool,
}

impl ConvPlan {
    pub fn new(
        in_a: usize,
        in_s: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        if kh == 0 || kw == 0 || stride.0 == 0 || stride.1 == 0 {
            return arg_err("kernel and stride must be >= 1");
        }
        let (la, ra) = padding.pads(kh);
        let (ls, rs) = padding.pads(kw);
        if in_a + la + ra < kh || in_s + ls + rs < kw {
            return dim_err(format!("input {in_a}x{in_s} smaller than kernel {kh}x{kw}"));
        }
        let out_a = (in_a + la + ra - kh) / stride.0 + 1;
        let out_s = (in_s + ls + rs - kw) / stride.1 + 1;
        let p = out_a * out_s;
        let mut src = Vec::with_capacity(kh * kw * p);
        for ki in 0..kh {
            for kj in 0..kw {
                for oa in 0..out_a {
                    let ia = padding.resolve((oa * stride.0 + ki) as isize - la as isize, in_a);
                    for os in 0..out_s {
                        let is = padding.resolve((os * stride.1 + kj) as isize - ls as isize, in_s);
                        src.push(ia * in_s + is);
                    }
                }
            }
        }
        let identity = kh == 1 && kw == 1 && stride == (1, 1);
        Ok(Self { in_plane: in_a * in_s, out_a, out_s, taps: kh * kw, src, identity })
    }

    pub fn out_plane(&self) -> usize {
        self.out_a * self.out_s
    }

    /// `x` is `channels * in_plane`; result is `(channels * taps) x out_plane`.
    fn im2col(&self, x: &[f64], channels: usize) -> Vec<f64> {
        if self.identity {
            return x.to_vec();
        }
        let p = self.out_plane();
        let mut cols = vec![0.0; channels * self.taps * p];
        for c in 0..channels {
            let xc = &x[c * self.in_plane..(c + 1) * self.in_plane];
            for k in 0..self.taps {
                let row = &mut cols[(c * self.taps + k) * p..(c * self.taps + k + 1) * p];
                for (dst, &s) in row.iter_mut().zip(&self.src[k * p..(k + 1) * p]) {
                    *dst = xc[s];
                }
            }
        }
        cols
    }

    /// Scatter-add adjoint of `im2col` into `out` (`channels * in_plane`).
    fn col2im(&self, cols: &[f64], channels: usize, out: &mut [f64]) {
        if self.identity {
            for (o, c) in out.iter_mut().zip(cols) {
                *o += c;
            }
            return;
        }
        let p = self.out_plane();
        for c in 0..channels {
            let oc = &mut out[c * self.in_plane..(c + 1) * self.in_plane];
            for k in 0..self.taps {
                let row = &cols[(c * self.taps + k) * p..(c * self.taps + k + 1) * p];
                for (&v, &s) in row.iter().zip(&self.src[k * p..(k + 1) * p]) {
                    oc[s] += v;
                }
            }
        }
    }
}

/// `c = op(a) * op(b) + beta * c`, all row-major; `ta`/`tb` mean the stored matrix is the transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape of a convolution weight: `[out, in, kh, kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelShape {
    pub out: usize,
    pub inp: usize,
    pub kh: usize,
    pub kw: usize,
}

impl KernelShape {
    pub fn len(&self) -> usize {
        self.out * self.inp * self.kh * self.kw
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn conv_forward(
    x: &Tensor4,
    w: &[f64],
    ks: KernelShape,
    bias: Option<&[f64]>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor4> {
    let [b, c, a, s] = x.shape();
    if c != ks.inp || w.len() != ks.len() {
        return dim_err(format!("conv expects {} input channels, got {c}", ks.inp));
    }
    let plan = ConvPlan::new(a, s, (ks.kh, ks.kw), stride, padding)?;
    let p = plan.out_plane();
    let ck = c * plan.taps;
    let mut out = vec![0.0; b * ks.out * p];
    for bi in 0..b {
        let cols = plan.im2col(x.item(bi), c);
        let y = &mut out[bi * ks.out * p..(bi + 1) * ks.out * p];
        if let Some(bias) = bias {
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.fill(bias[o]);
            }
        }
        gemm(ks.out, ck, p, w, false, &cols, false, 1.0, y);
    }
    Ok(Tensor4::from_raw([b, ks.out, plan.out_a, plan.out_s], out))
}

/// Returns `(dx, dw, db)` for `conv_forward`.
pub(crate) fn conv_backward(
    x: &Tensor4,
    w: &[f64],
    ks: KernelShape,
    stride: (usize, usize),
    padding: Padding,
    dy: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let [b, c, a, s] = x.shape();
    let plan = ConvPlan::new(a, s, (ks.kh, ks.kw), stride, padding)?;
    let p = plan.out_plane();
    if dy.shape() != [b, ks.out, plan.out_a, plan.out_s] {
        return dim_err("conv gradient shape mismatch");
    }
    let ck = c * plan.taps;
    let mut dx = vec![0.0; b * c * plan.in_plane];
    let mut dw = vec![0.0; ks.len()];
    let mut db = vec![0.0; ks.out];
    let mut dcols = vec![0.0; ck * p];
    for bi in 0..b {
        let dyb = dy.item(bi);
        for (o, row) in dyb.chunks(p).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        let cols = plan.im2col(x.item(bi), c);
        gemm(ks.out, p, ck, dyb, false, &cols, true, 1.0, &mut dw);
        gemm(ck, ks.out, p, w, true, dyb, false, 0.0, &mut dcols);
        plan.col2im(&dcols, c, &mut dx[bi * c * plan.in_plane..(bi + 1) * c * plan.in_plane]);
    }
    Ok((Tensor4::from_raw([b, c, a, s], dx), dw, db))
}

/// Output spatial size of a transposed convolution (no padding).
fn tconv_out(a: usize, s: usize, ks: KernelShape, stride: (usize, usize)) -> (usize, usize) {
    ((a - 1) * stride.0 + ks.kh, (s - 1) * stride.1 + ks.kw)
}

/// `w` is read as `[in = ks.out, out = ks.inp, kh, kw]`, i.e. the layout of the adjoint conv.
pub(crate) fn tconv_forward(
    x: &Tensor4,
    w: &[f64],
    ks: KernelShape,
    bias: Option<&[f64]>,
    stride: (usize, usize),
) -> Result<Tensor4> {
    let [b, ci, a, s] = x.shape();
    if ci != ks.out || w.len() != ks.len() {
        return dim_err(format!("transposed conv expects {} input channels, got {ci}", ks.out));
    }
    let co = ks.inp;
    let (oa, os) = tconv_out(a, s, ks, stride);
    let plan = ConvPlan::new(oa, os, (ks.kh, ks.kw), stride, Padding::None)?;
    let p = plan.out_plane();
    let cok = co * plan.taps;
    let mut out = vec![0.0; b * co * plan.in_plane];
    let mut cols = vec![0.0; cok * p];
    for bi in 0..b {
        gemm(cok, ci, p, w, true, x.item(bi), false, 0.0, &mut cols);
        let y = &mut out[bi * co * plan.in_plane..(bi + 1) * co * plan.in_plane];
        if let Some(bias) = bias {
            for (o, row) in y.chunks_mut(plan.in_plane).enumerate() {
                row.fill(bias[o]);
            }
        }
        plan.col2im(&cols, co, y);
    }
    Ok(Tensor4::from_raw([b, co, oa, os], out))
}

pub(crate) fn tconv_backward(
    x: &Tensor4,
    w: &[f64],
    ks: KernelShape,
    stride: (usize, usize),
    dy: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let [b, ci, a, s] = x.shape();
    let co = ks.inp;
    let (oa, os) = tconv_out(a, s, ks, stride);
    if dy.shape() != [b, co, oa, os] {
        return dim_err("transposed conv gradient shape mismatch");
    }
    let plan = ConvPlan::new(oa, os, (ks.kh, ks.kw), stride, Padding::None)?;
    let p = plan.out_plane();
    let cok = co * plan.taps;
    let mut dx = vec![0.0; b * ci * p];
    let mut dw = vec![0.0; ks.len()];
    let mut db = vec![0.0; co];
    for bi in 0..b {
        let dyb = dy.item(bi);
        for (o, row) in dyb.chunks(plan.in_plane).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        let dcols = plan.im2col(dyb, co);
        gemm(ci, cok, p, w, false, &dcols, false, 0.0, &mut dx[bi * ci * p..(bi + 1) * ci * p]);
        gemm(ci, p, cok, x.item(bi), false, &dcols, true, 1.0, &mut dw);
    }
    Ok((Tensor4::from_raw([b, ci, a, s], dx), dw, db))
}

/// Normalized activations and inverse std per (item, channel), kept for backward.
#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn instance_norm_forward(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
) -> Result<(Tensor4, NormCache)> {
    let [b, c, _, _] = x.shape();
    let p = x.plane();
    if p < 2 {
        return dim_err("instance norm needs a spatial size >= 2");
    }
    if gamma.len() != c || beta.len() != c {
        return dim_err("instance norm affine size mismatch");
    }
    let mut xhat = vec![0.0; x.data().len()];
    let mut inv_std = vec![0.0; b * c];
    let mut out = vec![0.0; x.data().len()];
    for (i, chunk) in x.data().chunks(p).enumerate() {
        let ch = i % c;
        let mean = chunk.iter().sum::<f64>() / p as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p as f64;
        let inv = 1.0 / (var + IN_EPS).sqrt();
        inv_std[i] = inv;
        for (j, v) in chunk.iter().enumerate() {
            let h = (v - mean) * inv;
            xhat[i * p + j] = h;
            out[i * p + j] = gamma[ch] * h + beta[ch];
        }
    }
    Ok((Tensor4::from_raw(x.shape(), out), NormCache { xhat, inv_std }))
}

pub(crate) fn instance_norm_backward(
    cache: &NormCache,
    gamma: &[f64],
    dy: &Tensor4,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let c = gamma.len();
    let p = dy.plane();
    let n = p as f64;
    let mut dx = vec![0.0; dy.data().len()];
    let mut dg = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (i, g) in dy.data().chunks(p).enumerate() {
        let ch = i % c;
        let xh = &cache.xhat[i * p..(i + 1) * p];
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        dg[ch] += sum_gx;
        dbeta[ch] += sum_g;
        let scale = gamma[ch] * cache.inv_std[i] / n;
        for j in 0..p {
            dx[i * p + j] = scale * (n * g[j] - sum_g - xh[j] * sum_gx);
        }
    }
    (Tensor4::from_raw(dy.shape(), dx), dg, dbeta)
}

fn kernel_shape(w: &Tensor4) -> KernelShape {
    let [out, inp, kh, kw] = w.shape();
    KernelShape { out, inp, kh, kw }
}

/// Cross-correlation of `input` with `weights` (`[out, in, kh, kw]`).
pub fn conv2d(
    input: &Tensor4,
    weights: &Tensor4,
    bias: Option<&[f64]>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor4> {
    let ks = kernel_shape(weights);
    if bias.is_some_and(|b| b.len() != ks.out) {
        return dim_err("bias length must equal output channels");
    }
    conv_forward(input, weights.data(), ks, bias, stride, padding)
}

/// Transposed convolution; `weights` is `[in, out, kh, kw]`. No padding.
pub fn transposed_conv2d(
    input: &Tensor4,
    weights: &Tensor4,
    bias: Option<&[f64]>,
    stride: (usize, usize),
) -> Result<Tensor4> {
    let ks = kernel_shape(weights);
    if bias.is_some_and(|b| b.len() != ks.inp) {
        return dim_err("bias length must equal output channels");
    }
    tconv_forward(input, weights.data(), ks, bias, stride)
}

/// Per-item, per-channel normalization over both spatial axes with an affine map.
pub fn instance_norm(input: &Tensor4, gamma: &[f64], beta: &[f64]) -> Result<Tensor4> {
    Ok(instance_norm_forward(input, gamma, beta)?.0)
}
