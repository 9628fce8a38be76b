use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::ls_line_project;
use crate::nn::{boundary_tensor, Mode, ModelParams, NetKind, Network, Tensor4};
use crate::simulate::{
    flip_boundaries, flip_map, flip_volume, inject_motion, sample_motion, FlipAxis, MotionConfig,
    Phantom,
};
use crate::train::loss::{
    center_mask, loss_total_z_grad, loss_total_z_grad_with, loss_vessel_grad, loss_xdisp_grad, sigmoid, CenterMask,
};
use crate::train::stage::Stage;
use crate::train::TrainConfig;
use crate::volume::{normalize_boundaries, Boundaries, VesselKind, VesselMap, Volume, ZDisplacementMap};

/// A motion-free volume with its reference surfaces and binary vessel map.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSample {
    pub volume: Volume,
    pub boundaries: Boundaries,
    pub vessels: VesselMap,
}

impl From<Phantom> for CleanSample {
    fn from(p: Phantom) -> Self {
        Self { volume: p.volume, boundaries: p.boundaries, vessels: p.vessels }
    }
}

impl CleanSample {
    pub fn validate(&self) -> Result<()> {
        let (h, w, n) = self.volume.dims();
        if (self.boundaries.height(), self.boundaries.width(), self.boundaries.slices()) != (h, w, n)
            || (self.vessels.width(), self.vessels.slices()) != (w, n)
        {
            return dim_err("sample boundaries or vessels do not match the volume");
        }
        if self.vessels.kind() != VesselKind::Binary {
            return arg_err("training vessel maps must be binary");
        }
        Ok(())
    }

    fn flipped(&self, axis: FlipAxis) -> Self {
        let (w, n) = (self.vessels.width(), self.vessels.slices());
        let vessels = flip_map(self.vessels.values(), w, n, axis);
        Self {
            volume: flip_volume(&self.volume, axis),
            boundaries: flip_boundaries(&self.boundaries, axis),
            vessels: VesselMap::new(w, n, vessels, VesselKind::Binary).expect("flip keeps values"),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Item {
    pub input: Tensor4,
    pub seg: Option<Tensor4>,
    /// Z: normalized displacement (`y * W + x`); vessel: binary map; X: correcting shift in pixels.
    pub target: Vec<f64>,
    /// Fixed smoothness target for the Z loss; recomputed from the prediction when absent.
    pub smooth_target: Option<Vec<f64>>,
}

/// Prepared network inputs and targets for one stage.
#[derive(Debug, Clone)]
pub struct StageBatch {
    kind: NetKind,
    width: usize,
    slices: usize,
    pub(crate) items: Vec<Item>,
    mask: Option<CenterMask>,
}

impl StageBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    /// Pins the smoothness targets of a Z batch to the line projections of the current
    /// prediction, so finite differences see the same constant target as the gradient.
    pub fn freeze_projection(&mut self, net: &Network, params: &ModelParams) -> Result<()> {
        if self.kind != NetKind::Z {
            return Ok(());
        }
        for it in &mut self.items {
            let x = Tensor4::stack(std::slice::from_ref(&it.input))?;
            let seg = it.seg.clone();
            let (g, out) = net.forward_with(params, &x, seg.as_ref(), &mut Mode::Eval)?;
            let d = ZDisplacementMap::new(self.width, self.slices, g.value(out).to_map(0, 0))?;
            it.smooth_target = Some(ls_line_project(&d)?.into_values());
        }
        Ok(())
    }
}

fn stage_motion(kind: NetKind, m: &MotionConfig) -> MotionConfig {
    match kind {
        NetKind::Z => MotionConfig { x_mean_abs: 0.0, x_max_abs: 0, ..*m },
        _ => MotionConfig { sigma_y: 0.0, sigma_x: 0.0, ..*m },
    }
}

pub(crate) fn prepare_item(
    stage: &Stage<'_>,
    net: &Network,
    cfg: &TrainConfig,
    sample: &CleanSample,
    motion_seed: u64,
    flips: &[FlipAxis],
) -> Result<Item> {
    sample.validate()?;
    let mut s = sample.clone();
    for &axis in flips {
        s = s.flipped(axis);
    }
    let (_, w, n) = s.volume.dims();
    let motion = sample_motion(motion_seed, w, n, &stage_motion(stage.kind(), &cfg.motion))?;
    let inj = inject_motion(&s.volume, &s.boundaries, &motion, cfg.z_norm, cfg.x_norm)?;
    let input = Tensor4::from_volume(&inj.volume);
    match stage {
        Stage::Z => {
            let seg = if net.config().use_segmentation_input {
                Some(boundary_tensor(&normalize_boundaries(&inj.boundaries, cfg.z_norm)?)?)
            } else {
                None
            };
            Ok(Item { input, seg, target: inj.gt_z.values().to_vec(), smooth_target: None })
        }
        Stage::Vessel => {
            let target = s.vessels.shifted_x(&motion.x_shift)?.values().to_vec();
            Ok(Item { input, seg: None, target, smooth_target: None })
        }
        Stage::X { vessel } => {
            let logits = vessel.infer(&input, None)?;
            let probs: Vec<f64> = logits.to_map(0, 0).iter().map(|&l| sigmoid(l)).collect();
            let input = Tensor4::from_maps(&[&probs], w, n)?;
            let target = motion.x_shift.iter().map(|&k| -(k as f64)).collect();
            Ok(Item { input, seg: None, target, smooth_target: None })
        }
    }
}

/// Injects motion drawn from `seed` (one sub-seed per sample) without flips.
pub fn prepare_batch(
    stage: &Stage<'_>,
    net: &Network,
    cfg: &TrainConfig,
    samples: &[CleanSample],
    seed: u64,
) -> Result<StageBatch> {
    let items = samples
        .iter()
        .enumerate()
        .map(|(i, s)| prepare_item(stage, net, cfg, s, seed.wrapping_add(i as u64), &[]))
        .collect::<Result<Vec<_>>>()?;
    StageBatch::new(stage.kind(), items)
}

impl StageBatch {
    pub(crate) fn new(kind: NetKind, items: Vec<Item>) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        let [_, _, w, n] = first.input.shape();
        let mask = if kind == NetKind::Z { Some(center_mask(w, n)?) } else { None };
        Ok(Self { kind, width: w, slices: n, items, mask })
    }
}

/// Mean loss over `indices` of `batch` and its gradient with respect to `params`.
pub(crate) fn objective(
    net: &Network,
    params: &ModelParams,
    batch: &StageBatch,
    indices: &[usize],
    cfg: &TrainConfig,
    mode: &mut Mode<'_>,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let items: Vec<&Item> = indices.iter().map(|&i| &batch.items[i]).collect();
    let x = Tensor4::stack(&items.iter().map(|it| it.input.clone()).collect::<Vec<_>>())?;
    let seg = match items[0].seg {
        Some(_) => Some(Tensor4::stack(
            &items.iter().map(|it| it.seg.clone().expect("uniform batch")).collect::<Vec<_>>(),
        )?),
        None => None,
    };
    let (g, out) = net.forward_with(params, &x, seg.as_ref(), mode)?;
    let y = g.value(out);
    let nb = items.len() as f64;
    let weights = cfg.weights();
    let (w, n) = (batch.width, batch.slices);
    let mut total = 0.0;
    let mut grad = vec![0.0; y.data().len()];
    let per_item = y.data().len() / items.len();
    for (b, it) in items.iter().enumerate() {
        let (loss, gi) = match batch.kind {
            NetKind::Z => {
                let d = ZDisplacementMap::new(w, n, y.to_map(b, 0))?;
                let gt = ZDisplacementMap::new(w, n, it.target.clone())?;
                let mask = batch.mask.as_ref().expect("z batches carry a mask");
                let (l, gm) = match &it.smooth_target {
                    Some(p) => {
                        let p = ZDisplacementMap::new(w, n, p.clone())?;
                        loss_total_z_grad_with(&d, &gt, mask, &weights, &p)?
                    }
                    None => loss_total_z_grad(&d, &gt, mask, &weights)?,
                };
                (l, Tensor4::from_maps(&[&gm], w, n)?.into_data())
            }
            NetKind::Vessel => {
                let (l, gm) = loss_vessel_grad(&y.to_map(b, 0), &it.target, &weights)?;
                (l, Tensor4::from_maps(&[&gm], w, n)?.into_data())
            }
            NetKind::X => loss_xdisp_grad(y.item(b), &it.target, cfg.x_norm)?,
        };
        total += loss;
        for (dst, v) in grad[b * per_item..(b + 1) * per_item].iter_mut().zip(gi) {
            *dst = v / nb;
        }
    }
    let loss = total / nb;
    if !with_grad {
        return Ok((loss, None));
    }
    let grads = g.backward(out, Tensor4::from_raw(y.shape(), grad))?;
    Ok((loss, Some(grads.params)))
}

/// Inference-mode loss of the whole batch and its parameter gradient.
pub fn stage_loss(
    net: &Network,
    params: &ModelParams,
    batch: &StageBatch,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.kind != net.kind() {
        return arg_err("batch was prepared for a different stage");
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (l, g) = objective(net, params, batch, &idx, cfg, &mut Mode::Eval, true)?;
    Ok((l, g.expect("gradient requested")))
}
