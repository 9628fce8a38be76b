//! Reverse-mode tape over the layer catalog.

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::nn::layers::{self, KernelShape, NormCache, Padding};
use crate::nn::params::{ModelParams, ParamId};
use crate::nn::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Conv { x: NodeId, w: ParamId, b: ParamId, ks: KernelShape, stride: (usize, usize), padding: Padding },
    TConv { x: NodeId, w: ParamId, b: ParamId, ks: KernelShape, stride: (usize, usize) },
    Norm { x: NodeId, gamma: ParamId, beta: ParamId, cache: NormCache },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Concat { a: NodeId, b: NodeId },
    Dropout { x: NodeId, scale: Vec<f64> },
    MeanFast { x: NodeId },
}

struct Node {
    value: Tensor4,
    op: Op,
}

/// Forward mode: training enables dropout and draws masks from the given RNG.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn rand::RngCore),
}

pub struct Graph<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node>,
}

/// Gradients with respect to parameters (same layout as [`ModelParams`]) and graph inputs.
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    inputs: Vec<Option<Tensor4>>,
}

impl Gradients {
    pub fn input(&self, id: NodeId) -> Option<&Tensor4> {
        self.inputs.get(id.0).and_then(|g| g.as_ref())
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self { params, nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor4, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor4 {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, t: Tensor4) -> NodeId {
        self.push(t, Op::Input)
    }

    pub fn conv(
        &mut self,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        ks: KernelShape,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<NodeId> {
        let y = layers::conv_forward(
            self.value(x),
            self.params.get(w),
            ks,
            Some(self.params.get(b)),
            stride,
            padding,
        )?;
        Ok(self.push(y, Op::Conv { x, w, b, ks, stride, padding }))
    }

    pub fn tconv(
        &mut self,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        ks: KernelShape,
        stride: (usize, usize),
    ) -> Result<NodeId> {
        let y = layers::tconv_forward(
            self.value(x),
            self.params.get(w),
            ks,
            Some(self.params.get(b)),
            stride,
        )?;
        Ok(self.push(y, Op::TConv { x, w, b, ks, stride }))
    }

    pub fn norm(&mut self, x: NodeId, gamma: ParamId, beta: ParamId) -> Result<NodeId> {
        let (y, cache) =
            layers::instance_norm_forward(self.value(x), self.params.get(gamma), self.params.get(beta))?;
        Ok(self.push(y, Op::Norm { x, gamma, beta, cache }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let y = Tensor4::from_raw(v.shape(), data);
        self.push(y, Op::Relu { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return dim_err(format!("add {:?} + {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let y = Tensor4::from_raw(va.shape(), data);
        Ok(self.push(y, Op::Add { a, b }))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let [ba, ca, sa, ta] = va.shape();
        let [bb, cb, sb, tb] = vb.shape();
        if (ba, sa, ta) != (bb, sb, tb) {
            return dim_err(format!("concat {:?} with {:?}", va.shape(), vb.shape()));
        }
        let mut data = Vec::with_capacity(va.data().len() + vb.data().len());
        for i in 0..ba {
            data.extend_from_slice(va.item(i));
            data.extend_from_slice(vb.item(i));
        }
        let y = Tensor4::from_raw([ba, ca + cb, sa, ta], data);
        Ok(self.push(y, Op::Concat { a, b }))
    }

    /// Channel-wise dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64, mode: &mut Mode<'_>) -> NodeId {
        let rng = match mode {
            Mode::Train(rng) if p > 0.0 => rng,
            _ => return x,
        };
        let v = self.value(x);
        let [b, c, _, _] = v.shape();
        let keep = 1.0 / (1.0 - p);
        let scale: Vec<f64> =
            (0..b * c).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let plane = v.plane();
        let data = v.data().iter().enumerate().map(|(i, a)| a * scale[i / plane]).collect();
        let y = Tensor4::from_raw(v.shape(), data);
        self.push(y, Op::Dropout { x, scale })
    }

    /// Mean over the fast spatial axis: `[B, C, A, S] -> [B, C, 1, S]`.
    pub fn mean_fast(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let [b, c, a, s] = v.shape();
        let mut data = vec![0.0; b * c * s];
        for bc in 0..b * c {
            for ai in 0..a {
                for si in 0..s {
                    data[bc * s + si] += v.data()[(bc * a + ai) * s + si];
                }
            }
        }
        for d in &mut data {
            *d /= a as f64;
        }
        let y = Tensor4::from_raw([b, c, 1, s], data);
        self.push(y, Op::MeanFast { x })
    }

    /// Back-propagates `grad` (shaped like `out`) through the tape.
    pub fn backward(&self, out: NodeId, grad: Tensor4) -> Result<Gradients> {
        if grad.shape() != self.value(out).shape() {
            return dim_err("output gradient shape mismatch");
        }
        let mut params = self.params.zeros_like();
        let mut grads: Vec<Option<Tensor4>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(grad);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {
                    grads[i] = Some(g);
                }
                Op::Conv { x, w, b, ks, stride, padding } => {
                    let (dx, dw, db) = layers::conv_backward(
                        self.value(*x),
                        self.params.get(*w),
                        *ks,
                        *stride,
                        *padding,
                        &g,
                    )?;
                    add_into(&mut params[w.0], &dw);
                    add_into(&mut params[b.0], &db);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::TConv { x, w, b, ks, stride } => {
                    let (dx, dw, db) =
                        layers::tconv_backward(self.value(*x), self.params.get(*w), *ks, *stride, &g)?;
                    add_into(&mut params[w.0], &dw);
                    add_into(&mut params[b.0], &db);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Norm { x, gamma, beta, cache } => {
                    let (dx, dg, dbeta) =
                        layers::instance_norm_backward(cache, self.params.get(*gamma), &g);
                    add_into(&mut params[gamma.0], &dg);
                    add_into(&mut params[beta.0], &dbeta);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Relu { x } => {
                    let y = &self.nodes[i].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| if *yv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], Tensor4::from_raw(g.shape(), data));
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Concat { a, b } => {
                    let sa = self.value(*a).shape();
                    let sb = self.value(*b).shape();
                    let na = sa[1] * g.plane();
                    let nb = sb[1] * g.plane();
                    let mut da = Vec::with_capacity(sa[0] * na);
                    let mut db = Vec::with_capacity(sb[0] * nb);
                    for bi in 0..sa[0] {
                        let item = g.item(bi);
                        da.extend_from_slice(&item[..na]);
                        db.extend_from_slice(&item[na..]);
                    }
                    accumulate(&mut grads[a.0], Tensor4::from_raw(sa, da));
                    accumulate(&mut grads[b.0], Tensor4::from_raw(sb, db));
                }
                Op::Dropout { x, scale } => {
                    let plane = g.plane();
                    let data =
                        g.data().iter().enumerate().map(|(j, v)| v * scale[j / plane]).collect();
                    accumulate(&mut grads[x.0], Tensor4::from_raw(g.shape(), data));
                }
                Op::MeanFast { x } => {
                    let [b, c, a, s] = self.value(*x).shape();
                    let mut data = vec![0.0; b * c * a * s];
                    for bc in 0..b * c {
                        for ai in 0..a {
                            for si in 0..s {
                                data[(bc * a + ai) * s + si] = g.data()[bc * s + si] / a as f64;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor4::from_raw([b, c, a, s], data));
                }
            }
        }
        Ok(Gradients { params, inputs: grads })
    }
}
