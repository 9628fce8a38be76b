//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use moco_core::nn::*;
use moco_core::simulate::{generate_phantom, PhantomConfig};
use moco_core::train::CleanSample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
    let n = shape.iter().product();
    Tensor4::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn pad_index(i: isize, n: usize, padding: Padding) -> usize {
    let n = n as isize;
    let mut i = i;
    match padding {
        Padding::Circular => {
            while i < 0 {
                i += n;
            }
            (i % n) as usize
        }
        _ => {
            if n == 1 {
                return 0;
            }
            while i < 0 || i >= n {
                i = if i < 0 { -i } else { 2 * (n - 1) - i };
            }
            i as usize
        }
    }
}

pub fn conv_oracle(x: &Tensor4, w: &Tensor4, bias: &[f64], stride: (usize, usize), padding: Padding) -> Tensor4 {
    let [b, c, a, s] = x.shape();
    let [o, _, kh, kw] = w.shape();
    let (pa, ps) = match padding {
        Padding::None => (0, 0),
        _ => ((kh - 1) / 2, (kw - 1) / 2),
    };
    let (ta, ts) = match padding {
        Padding::None => (0, 0),
        _ => (kh - 1, kw - 1),
    };
    let oa = (a + ta - kh) / stride.0 + 1;
    let os = (s + ts - kw) / stride.1 + 1;
    let mut out = Tensor4::zeros([b, o, oa, os]);
    for bi in 0..b {
        for oc in 0..o {
            for i in 0..oa {
                for j in 0..os {
                    let mut acc = bias[oc];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ia = pad_index((i * stride.0 + ki) as isize - pa as isize, a, padding);
                                let is = pad_index((j * stride.1 + kj) as isize - ps as isize, s, padding);
                                acc += x.get(bi, ci, ia, is) * w.get(oc, ci, ki, kj);
                            }
                        }
                    }
                    let idx = out.index(bi, oc, i, j);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

pub fn tconv_oracle(x: &Tensor4, w: &Tensor4, bias: &[f64], stride: (usize, usize)) -> Tensor4 {
    let [b, ci, a, s] = x.shape();
    let [_, co, kh, kw] = w.shape();
    let (oa, os) = ((a - 1) * stride.0 + kh, (s - 1) * stride.1 + kw);
    let mut out = Tensor4::zeros([b, co, oa, os]);
    for bi in 0..b {
        for o in 0..co {
            for i in 0..oa {
                for j in 0..os {
                    let idx = out.index(bi, o, i, j);
                    out.data_mut()[idx] = bias[o];
                }
            }
        }
        for c in 0..ci {
            for i in 0..a {
                for j in 0..s {
                    for o in 0..co {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let idx = out.index(bi, o, i * stride.0 + ki, j * stride.1 + kj);
                                out.data_mut()[idx] += x.get(bi, c, i, j) * w.get(c, o, ki, kj);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn max_rel(a: &Tensor4, b: &Tensor4) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}


/// Worst relative error between analytic and central-difference derivatives.
///
/// Coordinates failing at eps `1e-3` are re-checked at `1e-6`: a perturbation can
/// cross a ReLU kink, which a smaller step avoids. At most an eighth of the
/// coordinates may need the retry.
fn fd_error(analytic: &[f64], n: usize, mut probe: impl FnMut(usize, f64) -> f64) -> f64 {
    let err = |a: f64, num: f64| (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
    let mut worst = 0.0f64;
    let mut retried = 0;
    for (k, &a) in analytic.iter().enumerate().take(n) {
        let fd = |probe: &mut dyn FnMut(usize, f64) -> f64, eps: f64| (probe(k, eps) - probe(k, -eps)) / (2.0 * eps);
        let mut e = err(a, fd(&mut probe, 1e-3));
        if e >= 1e-4 {
            retried += 1;
            e = err(a, fd(&mut probe, 1e-6));
        }
        worst = worst.max(e);
    }
    if retried * 8 > n {
        return f64::INFINITY;
    }
    worst
}

/// Input gradient check for `loss = <f(x), r>` on the first 64 coordinates.
pub fn input_grad_error(params: &ModelParams, x: &Tensor4, f: &dyn Fn(&mut Graph, NodeId) -> NodeId, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(params);
    let input = g.input(x.clone());
    let out = f(&mut g, input);
    let r = random(g.value(out).shape(), &mut rng);
    let grads = g.backward(out, r.clone()).unwrap();
    let analytic = grads.input(input).unwrap().data().to_vec();
    let n = analytic.len().min(64);
    fd_error(&analytic, n, |k, eps| {
        let mut xp = x.clone();
        xp.data_mut()[k] += eps;
        let mut g = Graph::new(params);
        let i = g.input(xp);
        let o = f(&mut g, i);
        g.value(o).dot(&r)
    })
}

/// Parameter gradient check for `loss = <f(x), r>` on 64 random parameters.
pub fn param_grad_error(params: &ModelParams, x: &Tensor4, f: &dyn Fn(&mut Graph, NodeId) -> NodeId, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(params);
    let i = g.input(x.clone());
    let o = f(&mut g, i);
    let r = random(g.value(o).shape(), &mut rng);
    let flat: Vec<f64> = g.backward(o, r.clone()).unwrap().params.into_iter().flatten().collect();
    let idx = rand::seq::index::sample(&mut rng, flat.len(), flat.len().min(64)).into_vec();
    let analytic: Vec<f64> = idx.iter().map(|&j| flat[j]).collect();
    fd_error(&analytic, idx.len(), |k, eps| {
        let mut p = params.clone();
        *p.flat_mut(idx[k]).unwrap() += eps;
        let mut g = Graph::new(&p);
        let i = g.input(x.clone());
        let o = f(&mut g, i);
        g.value(o).dot(&r)
    })
}

pub fn layer_params(rng: &mut ChaCha8Rng, c: usize) -> (ModelParams, Vec<ParamId>) {
    let mut p = ModelParams::default();
    let v = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<_>>();
    let ids = vec![
        p.push("w1".into(), vec![c, c, 3, 3], v(c * c * 9, rng)),
        p.push("b1".into(), vec![c], v(c, rng)),
        p.push("g1".into(), vec![c], v(c, rng).iter().map(|a| a + 1.0).collect()),
        p.push("beta1".into(), vec![c], v(c, rng)),
        p.push("w2".into(), vec![c, c, 3, 3], v(c * c * 9, rng)),
        p.push("b2".into(), vec![c], v(c, rng)),
        p.push("g2".into(), vec![c], v(c, rng).iter().map(|a| a + 1.0).collect()),
        p.push("beta2".into(), vec![c], v(c, rng)),
        p.push("tw".into(), vec![c, c, 2, 1], v(c * c * 2, rng)),
        p.push("tb".into(), vec![c], v(c, rng)),
    ];
    (p, ids)
}

pub fn tiny_samples(n: usize) -> Vec<CleanSample> {
    (0..n)
        .map(|s| {
            let cfg = PhantomConfig { height: 16, width: 16, slices: 8, seed: s as u64, ..Default::default() };
            generate_phantom(&cfg).unwrap().into()
        })
        .collect()
}

pub fn tiny_config(kind: NetKind) -> NetConfig {
    let mut c = match kind {
        NetKind::Z => NetConfig::z(16, 16),
        NetKind::Vessel => NetConfig::vessel(16, 16),
        NetKind::X => NetConfig::x(16),
    };
    c.base_channels = 2;
    c.seg_hidden = 3;
    c
}

/// Relative error with a unit floor, for oracle comparisons.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// `int(norm * value)` by truncation, snapping near-integers.
pub fn int_shift(value: f64, norm: f64) -> i64 {
    let s = norm * value;
    if (s - s.round()).abs() < 1e-9 {
        s.round() as i64
    } else {
        s.trunc() as i64
    }
}

/// `out(z, x, y) = v(z - k(x, y), x, y)` one voxel at a time, zero fill.
pub fn apply_z_oracle(v: &moco_core::Volume, d: &moco_core::ZDisplacementMap, z_norm: f64) -> Vec<f32> {
    let (h, w, n) = v.dims();
    let mut out = vec![0.0f32; h * w * n];
    for y in 0..n {
        for x in 0..w {
            let k = int_shift(d.get(x, y), z_norm);
            for z in 0..h {
                let src = z as i64 - k;
                if (0..h as i64).contains(&src) {
                    out[(y * w + x) * h + z] = v.get(src as usize, x, y);
                }
            }
        }
    }
    out
}

/// `out(z, x, y) = v(z, x - k(y), y)`, zero fill.
pub fn apply_x_oracle(v: &moco_core::Volume, d: &moco_core::XDisplacementVec, x_norm: f64) -> Vec<f32> {
    let (h, w, n) = v.dims();
    let mut out = vec![0.0f32; h * w * n];
    for y in 0..n {
        let k = int_shift(d.values()[y], x_norm);
        for x in 0..w {
            let src = x as i64 - k;
            if (0..w as i64).contains(&src) {
                for z in 0..h {
                    out[(y * w + x) * h + z] = v.get(z, src as usize, y);
                }
            }
        }
    }
    out
}

/// Per-row least squares line by explicit 2x2 normal equations on raw abscissae.
pub fn ls_oracle(d: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.len());
    for row in d.chunks(w) {
        let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (x, v) in row.iter().enumerate() {
            let x = x as f64;
            sx += x;
            sxx += x * x;
            sy += v;
            sxy += x * v;
        }
        let n = w as f64;
        let det = n * sxx - sx * sx;
        let slope = (n * sxy - sx * sy) / det;
        let icpt = (sxx * sy - sx * sxy) / det;
        out.extend((0..w).map(|x| slope * x as f64 + icpt));
    }
    out
}

/// Single-pass textbook Pearson correlation.
pub fn pcc_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

pub fn masked_l1_oracle(d: &[f64], gt: &[f64], w: usize, n: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let mut acc = 0.0;
    for y in 0..n {
        for x in 0..w {
            let hx = (pi * x as f64 / (w - 1) as f64).sin().powi(2);
            let hy = (pi * y as f64 / (n - 1) as f64).sin().powi(2);
            let i = y * w + x;
            acc += (0.2 + 0.8 * hx * hy) * (d[i] - gt[i]).abs();
        }
    }
    acc / (w * n) as f64
}

/// Binary cross-entropy on probabilities, `-[s ln p + (1 - s) ln(1 - p)]`.
pub fn bce_oracle(logits: &[f64], s: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (l, t) in logits.iter().zip(s) {
        let p = 1.0 / (1.0 + (-l).exp());
        acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    acc / logits.len() as f64
}

pub fn dice_oracle(p: &[f64], s: &[f64]) -> f64 {
    let inter: f64 = p.iter().zip(s).map(|(a, b)| a * b).sum();
    let total: f64 = p.iter().sum::<f64>() + s.iter().sum::<f64>();
    1.0 - 2.0 * inter / total
}

/// Arc length of `k -> (h k, z q(k))` on `[0, k_max]` by composite Simpson on the exact derivative.
pub fn quartic_arc_oracle(c: [f64; 5], k_max: f64, z: f64, h: f64) -> f64 {
    let dq = |k: f64| c[1] + 2.0 * c[2] * k + 3.0 * c[3] * k * k + 4.0 * c[4] * k * k * k;
    let f = |k: f64| h.hypot(z * dq(k));
    let m = 20_000;
    let step = k_max / m as f64;
    let mut acc = f(0.0) + f(k_max);
    for i in 1..m {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * step);
    }
    acc * step / 3.0
}

/// Central finite difference of a scalar function of a vector.
pub fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + eps;
            let a = f(&xp);
            xp[i] = x[i] - eps;
            let b = f(&xp);
            xp[i] = x[i];
            (a - b) / (2.0 * eps)
        })
        .collect()
}
