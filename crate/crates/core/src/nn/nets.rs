//! Z-displacement U-Net, vessel segmentation U-Net and the X-motion encoder.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::nn::graph::{Graph, Mode, NodeId};
use crate::nn::layers::{KernelShape, Padding};
use crate::nn::params::{Init, ModelParams, ParamBuilder, ParamId};
use crate::nn::tensor::Tensor4;
use crate::volume::{NormalizedBoundaries, VesselKind, VesselMap, Volume, XDisplacementVec, ZDisplacementMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Z,
    Vessel,
    X,
}

impl std::fmt::Display for NetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetKind::Z => "z",
            NetKind::Vessel => "vessel",
            NetKind::X => "x",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Input channels: volume height for the U-Nets, 1 for the X encoder.
    pub in_channels: usize,
    pub levels: usize,
    pub base_channels: usize,
    pub dropout_p: f64,
    pub use_segmentation_input: bool,
    /// Width of the hidden 1x1 layer that merges the baseline output with the boundaries.
    pub seg_hidden: usize,
    pub z_norm: f64,
    pub x_norm: f64,
    pub padding: Padding,
}

impl NetConfig {
    pub fn z(height: usize, width: usize) -> Self {
        Self {
            in_channels: height,
            levels: 4,
            base_channels: 8,
            dropout_p: 0.2,
            use_segmentation_input: true,
            seg_hidden: 8,
            z_norm: 10.0,
            x_norm: width as f64 / 512.0,
            padding: Padding::Reflect,
        }
    }

    pub fn vessel(height: usize, width: usize) -> Self {
        Self { use_segmentation_input: false, ..Self::z(height, width) }
    }

    pub fn x(width: usize) -> Self {
        Self { in_channels: 1, dropout_p: 0.4, use_segmentation_input: false, ..Self::z(1, width) }
    }

    /// Full-size Z network on 496-deep, 512-wide scans.
    pub fn reference_z() -> Self {
        Self { base_channels: 14, seg_hidden: 16, ..Self::z(496, 512) }
    }

    pub fn validate(&self, kind: NetKind) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return arg_err("levels, base_channels and in_channels must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return arg_err(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if !(self.z_norm > 0.0 && self.x_norm > 0.0 && self.z_norm.is_finite() && self.x_norm.is_finite()) {
            return arg_err("z_norm and x_norm must be positive");
        }
        if self.padding == Padding::None {
            return arg_err("network convolutions need reflect or circular padding");
        }
        if self.use_segmentation_input && (kind != NetKind::Z || self.seg_hidden == 0) {
            return arg_err("segmentation input applies to the Z network and needs seg_hidden >= 1");
        }
        if kind == NetKind::X && self.in_channels != 1 {
            return arg_err("the X network takes a single-channel vessel map");
        }
        Ok(())
    }

    /// Fast-axis length must be a multiple of this.
    pub fn width_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
    ks: KernelShape,
    stride: (usize, usize),
    padding: Padding,
}

impl Conv {
    fn declare(
        pb: &mut ParamBuilder,
        name: &str,
        inp: usize,
        out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Self {
        let ks = KernelShape { out, inp, kh: kernel.0, kw: kernel.1 };
        pb.scoped(name, |pb| {
            let w = pb.add("w", vec![out, inp, kernel.0, kernel.1], Init::He(inp * kernel.0 * kernel.1));
            let b = pb.add("b", vec![out], Init::Const(0.0));
            Self { w, b, ks, stride, padding }
        })
    }

    fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        g.conv(x, self.w, self.b, self.ks, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn declare(pb: &mut ParamBuilder, name: &str, c: usize) -> Self {
        pb.scoped(name, |pb| Self {
            gamma: pb.add("gamma", vec![c], Init::Const(1.0)),
            beta: pb.add("beta", vec![c], Init::Const(0.0)),
        })
    }
}

/// conv -> IN -> ReLU
#[derive(Debug, Clone)]
struct ConvNorm {
    conv: Conv,
    norm: Norm,
}

impl ConvNorm {
    #[allow(clippy::too_many_arguments)]
    fn declare(
        pb: &mut ParamBuilder,
        name: &str,
        inp: usize,
        out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Self {
        pb.scoped(name, |pb| Self {
            conv: Conv::declare(pb, "conv", inp, out, kernel, stride, padding),
            norm: Norm::declare(pb, "norm", out),
        })
    }

    fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let h = self.conv.apply(g, x)?;
        let h = g.norm(h, self.norm.gamma, self.norm.beta)?;
        Ok(g.relu(h))
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    c1: Conv,
    n1: Norm,
    c2: Conv,
    n2: Norm,
}

impl ResBlock {
    fn declare(pb: &mut ParamBuilder, name: &str, c: usize, padding: Padding) -> Self {
        pb.scoped(name, |pb| Self {
            c1: Conv::declare(pb, "conv1", c, c, (3, 3), (1, 1), padding),
            n1: Norm::declare(pb, "norm1", c),
            c2: Conv::declare(pb, "conv2", c, c, (3, 3), (1, 1), padding),
            n2: Norm::declare(pb, "norm2", c),
        })
    }

    fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let h = self.c1.apply(g, x)?;
        let h = g.norm(h, self.n1.gamma, self.n1.beta)?;
        let h = g.relu(h);
        let h = self.c2.apply(g, h)?;
        let h = g.norm(h, self.n2.gamma, self.n2.beta)?;
        let s = g.add(h, x)?;
        Ok(g.relu(s))
    }
}

/// 2x1 transposed conv with stride 2x1 -> IN -> ReLU
#[derive(Debug, Clone)]
struct Up {
    w: ParamId,
    b: ParamId,
    ks: KernelShape,
    norm: Norm,
}

impl Up {
    fn declare(pb: &mut ParamBuilder, name: &str, inp: usize, out: usize) -> Self {
        pb.scoped(name, |pb| {
            let w = pb.add("tconv.w", vec![inp, out, 2, 1], Init::He(inp * 2));
            let b = pb.add("tconv.b", vec![out], Init::Const(0.0));
            let norm = Norm::declare(pb, "norm", out);
            // Stored layout is that of the adjoint conv: out = inp, inp = out.
            Self { w, b, ks: KernelShape { out: inp, inp: out, kh: 2, kw: 1 }, norm }
        })
    }

    fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let h = g.tconv(x, self.w, self.b, self.ks, (2, 1))?;
        let h = g.norm(h, self.norm.gamma, self.norm.beta)?;
        Ok(g.relu(h))
    }
}

#[derive(Debug, Clone)]
struct UNet {
    stem_in: ConvNorm,
    stem: ConvNorm,
    enc: Vec<ResBlock>,
    down: Vec<ConvNorm>,
    up: Vec<Up>,
    skip: Vec<ResBlock>,
    fuse: Vec<ConvNorm>,
    head: Conv,
}

impl UNet {
    fn declare(pb: &mut ParamBuilder, cfg: &NetConfig) -> Self {
        let pad = cfg.padding;
        let c = |l| cfg.channels(l);
        let stem_in = ConvNorm::declare(pb, "stem_in", cfg.in_channels, c(0), (1, 1), (1, 1), pad);
        let stem = ConvNorm::declare(pb, "stem", c(0), c(0), (3, 3), (1, 1), pad);
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..cfg.levels {
            if l > 0 {
                let name = format!("down{l}");
                down.push(ConvNorm::declare(pb, &name, c(l - 1), c(l), (2, 1), (2, 1), Padding::None));
            }
            enc.push(ResBlock::declare(pb, &format!("enc{l}"), c(l), pad));
        }
        let mut up = Vec::new();
        let mut skip = Vec::new();
        let mut fuse = Vec::new();
        for l in 0..cfg.levels.saturating_sub(1) {
            up.push(Up::declare(pb, &format!("up{l}"), c(l + 1), c(l)));
            if l > 0 {
                skip.push(ResBlock::declare(pb, &format!("skip{l}"), c(l), pad));
            }
            let fin = if l > 0 { 2 * c(l) } else { c(l) };
            fuse.push(ConvNorm::declare(pb, &format!("dec{l}"), fin, c(l), (3, 3), (1, 1), pad));
        }
        let head = Conv::declare(pb, "head", c(0), 1, (1, 1), (1, 1), pad);
        Self { stem_in, stem, enc, down, up, skip, fuse, head }
    }

    fn forward(&self, g: &mut Graph<'_>, x: NodeId, p: f64, mode: &mut Mode<'_>) -> Result<NodeId> {
        let levels = self.enc.len();
        let mut h = self.stem_in.apply(g, x)?;
        h = self.stem.apply(g, h)?;
        let mut feats = Vec::with_capacity(levels);
        for l in 0..levels {
            if l > 0 {
                h = self.down[l - 1].apply(g, h)?;
            }
            h = self.enc[l].apply(g, h)?;
            h = g.dropout(h, p, mode);
            feats.push(h);
        }
        for l in (0..levels - 1).rev() {
            let u = self.up[l].apply(g, h)?;
            // No skip connection at the original resolution.
            let merged = if l > 0 {
                let s = self.skip[l - 1].apply(g, feats[l])?;
                g.concat(u, s)?
            } else {
                u
            };
            h = self.fuse[l].apply(g, merged)?;
            h = g.dropout(h, p, mode);
        }
        self.head.apply(g, h)
    }
}

#[derive(Debug, Clone)]
struct XNet {
    stem: ConvNorm,
    down: Vec<ConvNorm>,
    res: Vec<ResBlock>,
    head1: Conv,
    head2: Conv,
}

impl XNet {
    fn declare(pb: &mut ParamBuilder, cfg: &NetConfig) -> Self {
        let pad = cfg.padding;
        let c = |l| cfg.channels(l);
        let stem = ConvNorm::declare(pb, "stem", cfg.in_channels, c(0), (3, 3), (1, 1), pad);
        let mut down = Vec::new();
        let mut res = Vec::new();
        for l in 1..cfg.levels {
            down.push(ConvNorm::declare(pb, &format!("down{l}"), c(l - 1), c(l), (2, 1), (2, 1), Padding::None));
            res.push(ResBlock::declare(pb, &format!("enc{l}"), c(l), pad));
        }
        let top = c(cfg.levels - 1);
        let head1 = Conv::declare(pb, "head1", top, top, (1, 1), (1, 1), pad);
        let head2 = Conv::declare(pb, "head2", top, 1, (1, 1), (1, 1), pad);
        Self { stem, down, res, head1, head2 }
    }

    fn forward(&self, g: &mut Graph<'_>, x: NodeId, p: f64, mode: &mut Mode<'_>) -> Result<NodeId> {
        let mut h = self.stem.apply(g, x)?;
        for (d, r) in self.down.iter().zip(&self.res) {
            h = d.apply(g, h)?;
            h = r.apply(g, h)?;
            h = g.dropout(h, p, mode);
        }
        let h = self.head1.apply(g, h)?;
        let h = g.relu(h);
        let h = self.head2.apply(g, h)?;
        Ok(g.mean_fast(h))
    }
}

#[derive(Debug, Clone)]
enum Arch {
    Z { unet: UNet, seg: Option<(Conv, Conv)> },
    Vessel { unet: UNet },
    X(XNet),
}

/// A network architecture together with its parameters.
#[derive(Debug, Clone)]
pub struct Network {
    kind: NetKind,
    config: NetConfig,
    arch: Arch,
    params: ModelParams,
}

impl Network {
    pub fn new(kind: NetKind, config: NetConfig, seed: u64) -> Result<Self> {
        config.validate(kind)?;
        let mut pb = ParamBuilder::new(seed);
        let arch = match kind {
            NetKind::Z => {
                let unet = UNet::declare(&mut pb, &config);
                let seg = config.use_segmentation_input.then(|| {
                    let p = config.padding;
                    let h = config.seg_hidden;
                    (
                        Conv::declare(&mut pb, "seg1", 3, h, (1, 1), (1, 1), p),
                        Conv::declare(&mut pb, "seg2", h, 1, (1, 1), (1, 1), p),
                    )
                });
                Arch::Z { unet, seg }
            }
            NetKind::Vessel => Arch::Vessel { unet: UNet::declare(&mut pb, &config) },
            NetKind::X => Arch::X(XNet::declare(&mut pb, &config)),
        };
        Ok(Self { kind, config, arch, params: pb.finish() })
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Replaces all parameters; names and shapes must match the architecture.
    pub fn set_params(&mut self, params: ModelParams) -> Result<()> {
        let same = params.len() == self.params.len()
            && params
                .tensors()
                .iter()
                .zip(self.params.tensors())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !same {
            return Err(Error::Format("parameters do not match the network layout".into()));
        }
        params.check_finite()?;
        self.params = params;
        Ok(())
    }

    fn check_input(&self, x: &Tensor4, seg: Option<&Tensor4>) -> Result<()> {
        let [b, c, w, n] = x.shape();
        if c != self.config.in_channels {
            return dim_err(format!("{} network expects {} channels, got {c}", self.kind, self.config.in_channels));
        }
        if w % self.config.width_multiple() != 0 {
            return dim_err(format!("width {w} must be divisible by {}", self.config.width_multiple()));
        }
        let wants_seg = matches!(self.arch, Arch::Z { seg: Some(_), .. });
        match (wants_seg, seg) {
            (true, None) => arg_err("normalized boundaries are required by this network"),
            (false, Some(_)) => arg_err("this network takes no boundary input"),
            (true, Some(s)) if s.shape() != [b, 2, w, n] => dim_err("boundary tensor shape mismatch"),
            _ => Ok(()),
        }
    }

    /// Records the forward pass on a fresh tape; output is `[B, 1, W, N]` (U-Nets) or `[B, 1, 1, N]` (X).
    pub fn forward<'s>(
        &'s self,
        x: &Tensor4,
        seg: Option<&Tensor4>,
        mode: &mut Mode<'_>,
    ) -> Result<(Graph<'s>, NodeId)> {
        self.forward_with(&self.params, x, seg, mode)
    }

    /// [`Network::forward`] with substitute parameters of the same layout.
    pub fn forward_with<'s>(
        &self,
        params: &'s ModelParams,
        x: &Tensor4,
        seg: Option<&Tensor4>,
        mode: &mut Mode<'_>,
    ) -> Result<(Graph<'s>, NodeId)> {
        self.check_input(x, seg)?;
        if params.len() != self.params.len() {
            return Err(Error::Format("parameters do not match the network layout".into()));
        }
        let mut g = Graph::new(params);
        let input = g.input(x.clone());
        let p = self.config.dropout_p;
        let out = match &self.arch {
            Arch::Z { unet, seg: head } => {
                let base = unet.forward(&mut g, input, p, mode)?;
                match (head, seg) {
                    (Some((s1, s2)), Some(s)) => {
                        let b = g.input(s.clone());
                        let cat = g.concat(base, b)?;
                        let h = s1.apply(&mut g, cat)?;
                        let h = g.relu(h);
                        s2.apply(&mut g, h)?
                    }
                    _ => base,
                }
            }
            Arch::Vessel { unet } => unet.forward(&mut g, input, p, mode)?,
            Arch::X(net) => net.forward(&mut g, input, p, mode)?,
        };
        Ok((g, out))
    }

    /// Forward without dropout, returning only the output tensor.
    pub fn infer(&self, x: &Tensor4, seg: Option<&Tensor4>) -> Result<Tensor4> {
        let (g, out) = self.forward(x, seg, &mut Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    fn expect(&self, kind: NetKind) -> Result<()> {
        if self.kind != kind {
            return arg_err(format!("expected a {kind} network, got {}", self.kind));
        }
        Ok(())
    }
}

/// `[1, 2, W, N]` boundary input in the ILM, RPE channel order.
pub fn boundary_tensor(b: &NormalizedBoundaries) -> Result<Tensor4> {
    let n = b.width * b.slices;
    let (ilm, rpe) = b.values.split_at(n);
    Tensor4::from_maps(&[ilm, rpe], b.width, b.slices)
}

fn mode_for<'r>(training: bool, rng: &'r mut dyn RngCore) -> Mode<'r> {
    if training {
        Mode::Train(rng)
    } else {
        Mode::Eval
    }
}

/// Predicts the normalized axial displacement map of `v`.
pub fn znet_forward(
    v: &Volume,
    b_norm: Option<&NormalizedBoundaries>,
    net: &Network,
    training: bool,
    rng: &mut dyn RngCore,
) -> Result<ZDisplacementMap> {
    net.expect(NetKind::Z)?;
    let x = Tensor4::from_volume(v);
    let seg = b_norm.map(boundary_tensor).transpose()?;
    let (g, out) = net.forward(&x, seg.as_ref(), &mut mode_for(training, rng))?;
    g.value(out).to_z_map(0)
}

/// En-face vessel logits of an axially corrected volume.
pub fn vesselnet_forward(
    v_dz: &Volume,
    net: &Network,
    training: bool,
    rng: &mut dyn RngCore,
) -> Result<VesselMap> {
    net.expect(NetKind::Vessel)?;
    let x = Tensor4::from_volume(v_dz);
    let (g, out) = net.forward(&x, None, &mut mode_for(training, rng))?;
    let (w, n) = (v_dz.width(), v_dz.slices());
    VesselMap::new(w, n, g.value(out).to_map(0, 0), VesselKind::Logits)
}

/// Normalized per-B-scan x displacement from a vessel probability map.
pub fn xnet_forward(
    s: &VesselMap,
    net: &Network,
    training: bool,
    rng: &mut dyn RngCore,
) -> Result<XDisplacementVec> {
    net.expect(NetKind::X)?;
    let x = Tensor4::from_maps(&[s.values()], s.width(), s.slices())?;
    let (g, out) = net.forward(&x, None, &mut mode_for(training, rng))?;
    XDisplacementVec::new(g.value(out).data().to_vec())
}
