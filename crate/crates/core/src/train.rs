//! Two-phase training: the edge net on perturbed ground-truth masks, then
//! the segmentation net with the edge net frozen.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{mix_seed, one_hot, Sample};
use crate::error::{Error, Result};
use crate::eval::{dataset_confusion, edge_accuracy, miou, prediction_mask};
use crate::grid::Grid;
use crate::losses::{self, LossConfig, Strategy};
use crate::mask::{extract_edge_map, perturb_mask, LabelMask};
use crate::nets::{EdgeNetParams, Params, SegNetParams, EDGE_NET_DEPTH};
use crate::tape::{Gradients, Tape};

const STREAM_EDGE: u64 = 1;
const STREAM_SEG: u64 = 2;
const STREAM_INIT: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Samples per SGD step.
    pub batch: usize,
    pub edge_epochs: usize,
    pub seg_epochs: usize,
    pub edge_lr: f64,
    pub seg_lr: f64,
    pub momentum: f64,
    /// Largest global L2 norm of a segmentation-net batch gradient; larger
    /// ones are rescaled.
    pub clip_norm: Option<f64>,
    /// Noise scale of the mask perturbation used while training the edge net.
    pub sigma: f64,
    pub seed: u64,
    pub mirror: bool,
    /// Side of the square random crop applied to training samples.
    pub crop: Option<usize>,
    pub loss: LossConfig,
    /// Per-layer learning-rate factors; missing entries count as 1.
    pub lr_multipliers: Vec<f64>,
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 8,
            edge_epochs: 30,
            seg_epochs: 60,
            edge_lr: 5e-2,
            seg_lr: 1e-2,
            momentum: 0.9,
            clip_norm: Some(2.0),
            sigma: 0.5,
            seed: 0,
            mirror: true,
            crop: None,
            loss: LossConfig::default(),
            lr_multipliers: Vec::new(),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch == 0 {
            return bad("batch size must be at least 1".into());
        }
        for (name, lr) in [("edge_lr", self.edge_lr), ("seg_lr", self.seg_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if let Some(c) = self.crop {
            if c < 2 || c % 2 != 0 {
                return bad(format!("crop must be an even size of at least 2, got {c}"));
            }
        }
        if let Some(m) = self.lr_multipliers.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return bad(format!("learning-rate multipliers must be positive, got {m}"));
        }
        self.loss.validate()
    }

    fn layer_lr(&self, base: f64, layer: usize) -> f64 {
        base * self.lr_multipliers.get(layer).copied().unwrap_or(1.0)
    }
}

/// `v ← momentum·v + g`, then `p ← p − lr·v`.
pub fn sgd_step(param: &mut Grid, grad: &Grid, lr: f64, momentum: f64, velocity: &mut Grid) -> Result<()> {
    param.expect_same_shape(grad)?;
    param.expect_same_shape(velocity)?;
    for ((p, v), g) in param.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before rescaling.
pub fn clip_global_norm(grads: &mut [Grid], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        for g in grads.iter_mut() {
            g.scale_in_place(max_norm / norm);
        }
    }
    norm
}

/// Momentum SGD over every kernel and bias of a network.
struct Optimizer {
    velocity: Vec<Grid>,
}

impl Optimizer {
    fn new(params: &Params) -> Self {
        let velocity = params
            .layers()
            .iter()
            .flat_map(|l| [Grid::zeros(l.kernel.shape()), Grid::zeros(l.bias.shape())])
            .collect();
        Self { velocity }
    }

    fn step(&mut self, params: &mut Params, mut grads: Vec<Grid>, base_lr: f64, clip: Option<f64>, cfg: &TrainConfig) -> Result<()> {
        if let Some(c) = clip {
            clip_global_norm(&mut grads, c);
        }
        let layers = params.layers_mut();
        if grads.len() != 2 * layers.len() {
            return Err(Error::Shape(format!(
                "{} gradient tensors for {} layers",
                grads.len(),
                layers.len()
            )));
        }
        for (i, layer) in layers.into_iter().enumerate() {
            let lr = cfg.layer_lr(base_lr, i);
            sgd_step(&mut layer.kernel, &grads[2 * i], lr, cfg.momentum, &mut self.velocity[2 * i])?;
            sgd_step(&mut layer.bias, &grads[2 * i + 1], lr, cfg.momentum, &mut self.velocity[2 * i + 1])?;
        }
        Ok(())
    }
}

/// Horizontal mirror of an image and its mask.
pub fn mirror_pair(image: &Grid, mask: &LabelMask) -> Result<(Grid, LabelMask)> {
    let (c, h, w) = image.chw()?;
    let src = image.data();
    let flipped = Grid::from_fn(&[c, h, w], |i| {
        let x = i % w;
        src[i - x + (w - 1 - x)]
    });
    Ok((flipped, mask.mirrored()))
}

/// Crops the same window from an image and its mask.
pub fn crop_pair(image: &Grid, mask: &LabelMask, top: usize, left: usize, height: usize, width: usize) -> Result<(Grid, LabelMask)> {
    let (c, h, w) = image.chw()?;
    if (h, w) != (mask.height(), mask.width()) {
        return Err(Error::Shape(format!(
            "image is {h}×{w} but mask is {}×{}",
            mask.height(),
            mask.width()
        )));
    }
    let cropped_mask = mask.crop(top, left, height, width)?;
    let src = image.data();
    let cropped = Grid::from_fn(&[c, height, width], |i| {
        let (ch, rest) = (i / (height * width), i % (height * width));
        let (y, x) = (rest / width, rest % width);
        src[(ch * h + top + y) * w + left + x]
    });
    Ok((cropped, cropped_mask))
}

/// Random horizontal mirror (when enabled) followed by a random square crop
/// (when `crop` is set). Labels are moved, never interpolated.
pub fn augment(image: &Grid, mask: &LabelMask, mirror: bool, crop: Option<usize>, rng: &mut impl Rng) -> Result<(Grid, LabelMask)> {
    let (_, h, w) = image.chw()?;
    if let Some(c) = crop {
        if c > h || c > w {
            return Err(Error::InvalidArgument(format!("crop {c}×{c} is larger than the {h}×{w} image")));
        }
    }
    let flip = mirror && rng.random_bool(0.5);
    let (mut image, mut mask) = if flip {
        mirror_pair(image, mask)?
    } else {
        (image.clone(), mask.clone())
    };
    if let Some(c) = crop {
        let top = rng.random_range(0..=h - c);
        let left = rng.random_range(0..=w - c);
        (image, mask) = crop_pair(&image, &mask, top, left, c, c)?;
    }
    Ok((image, mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Edge,
    Seg,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Edge => "edge",
            Phase::Seg => "seg",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub phase: Phase,
    /// Mean per-sample training loss.
    pub loss: f64,
    pub val_miou: Option<f64>,
    pub wall_seconds: Option<f64>,
}

/// `epoch,phase,loss,val_miou,wall_seconds`, absent values left empty.
pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,phase,loss,val_miou,wall_seconds\n");
    for r in records {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.phase.as_str(),
            r.loss,
            opt(r.val_miou),
            opt(r.wall_seconds)
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct EdgeTraining {
    pub params: EdgeNetParams,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct SegTraining {
    pub params: SegNetParams,
    pub history: Vec<EpochRecord>,
}

/// Shuffled sample order for one epoch.
fn epoch_order(n: usize, seed: u64, stream: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, &[stream, epoch as u64])));
    order
}

/// Sums per-sample gradients in batch order and divides by the batch size.
fn batch_mean(per_sample: Vec<(f64, Vec<Grid>)>) -> Result<(f64, Vec<Grid>)> {
    let k = per_sample.len() as f64;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut acc) = iter.next().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for (l, grads) in iter {
        loss += l;
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_assign(g)?;
        }
    }
    for a in &mut acc {
        a.scale_in_place(1.0 / k);
    }
    Ok((loss, acc))
}

fn collect_grads(grads: &Gradients, nodes: &[crate::nets::LayerNodes], params: &[&crate::nets::ConvLayer]) -> Vec<Grid> {
    nodes
        .iter()
        .zip(params)
        .flat_map(|(n, l)| [grads.get_or_zeros(n.kernel, &l.kernel), grads.get_or_zeros(n.bias, &l.bias)])
        .collect()
}

fn check_finite(loss: f64, phase: Phase, epoch: usize, id: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{} loss became {loss} at epoch {epoch} on sample {id}",
            phase.as_str()
        )))
    }
}

fn elapsed(start: &Instant, cfg: &TrainConfig) -> Option<f64> {
    cfg.record_wall_time.then(|| start.elapsed().as_secs_f64())
}

/// Loss and parameter gradients of the edge net on one perturbed mask.
fn edge_sample(net: &EdgeNetParams, mask: &LabelMask, sigma: f64, seed: u64) -> Result<(f64, Vec<Grid>)> {
    let input = perturb_mask(&one_hot(mask, net.classes())?, sigma, seed)?;
    let targets = extract_edge_map(mask).class_targets();
    let mut tape = Tape::new();
    let nodes = net.register(&mut tape, true);
    let x = tape.constant(input);
    let emb = net.forward_on(&mut tape, x, &nodes, EDGE_NET_DEPTH)?;
    let loss = losses::ppce_on(&mut tape, emb.post[EDGE_NET_DEPTH - 1], targets, losses::Reduction::Mean)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backprop(loss)?;
    let layers: Vec<_> = net.layers().iter().collect();
    Ok((value, collect_grads(&grads, &nodes, &layers)))
}

/// Mean edge-pixel accuracy of the edge net on clean one-hot masks.
pub fn edge_net_accuracy(net: &EdgeNetParams, masks: &[LabelMask]) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("no masks to score".into()));
    }
    let accs = masks
        .par_iter()
        .map(|m| {
            let (probs, _) = net.forward(&one_hot(m, net.classes())?)?;
            edge_accuracy(&probs, &extract_edge_map(m))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Phase 1: fits the edge net to map perturbed one-hot masks onto their
/// semantic edge maps.
pub fn train_edge_net(masks: &[LabelMask], classes: usize, cfg: &TrainConfig) -> Result<EdgeTraining> {
    cfg.validate()?;
    if masks.is_empty() {
        return Err(Error::InvalidArgument("edge-net training needs at least one mask".into()));
    }
    for m in masks {
        m.check_classes(classes)?;
    }
    let mut params = Params::Edge(EdgeNetParams::init(classes, mix_seed(cfg.seed, &[STREAM_INIT, STREAM_EDGE]))?);
    let mut opt = Optimizer::new(&params);
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.edge_epochs);

    for epoch in 1..=cfg.edge_epochs {
        let order = epoch_order(masks.len(), cfg.seed, STREAM_EDGE, epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let Params::Edge(net) = &params else { unreachable!() };
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let seed = mix_seed(cfg.seed, &[STREAM_EDGE, epoch as u64, i as u64]);
                    let out = edge_sample(net, &masks[i], cfg.sigma, seed)?;
                    check_finite(out.0, Phase::Edge, epoch, &format!("#{i}"))?;
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_mean(per_sample)?;
            total += loss;
            opt.step(&mut params, grads, cfg.edge_lr, None, cfg)?;
        }
        history.push(EpochRecord {
            epoch,
            phase: Phase::Edge,
            loss: total / masks.len() as f64,
            val_miou: None,
            wall_seconds: elapsed(&start, cfg),
        });
    }
    Ok(EdgeTraining {
        params: params.into_edge()?,
        history,
    })
}

/// Loss and parameter gradients of the segmentation net on one sample.
fn seg_sample(
    seg: &SegNetParams,
    edge_net: Option<&EdgeNetParams>,
    image: Grid,
    mask: &LabelMask,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<Grid>)> {
    let mut tape = Tape::new();
    let nodes = seg.register(&mut tape, true);
    let x = tape.constant(image);
    let out = seg.forward_on(&mut tape, x, &nodes)?;
    let loss = match loss_cfg.strategy {
        Strategy::Ppce => losses::ppce_on(&mut tape, out.probs, mask.class_targets(), loss_cfg.reduction)?,
        Strategy::Multitask => {
            let head = out
                .edge_probs
                .ok_or_else(|| Error::InvalidArgument("multitask training needs an edge head".into()))?;
            let edges = extract_edge_map(mask);
            losses::multitask_on(&mut tape, out.probs, head, mask, &edges, loss_cfg.lambdas[0], loss_cfg.reduction)?
        }
        Strategy::PpceOnEdges | Strategy::Semeda => {
            let net = edge_net.ok_or_else(|| missing_edge_net(loss_cfg.strategy))?;
            let en = net.register(&mut tape, false);
            let gt = tape.constant(one_hot(mask, seg.classes())?);
            let edges = extract_edge_map(mask);
            losses::total_on(&mut tape, out.probs, mask, gt, &edges, net, &en, loss_cfg)?
        }
    };
    let value = tape.value(loss).data()[0];
    let grads = tape.backprop(loss)?;
    let mut layer_nodes = nodes.trunk.clone();
    layer_nodes.extend(nodes.edge_head);
    let layers: Vec<_> = seg.layers().iter().chain(seg.edge_head()).collect();
    Ok((value, collect_grads(&grads, &layer_nodes, &layers)))
}

fn missing_edge_net(strategy: Strategy) -> Error {
    Error::InvalidArgument(format!("strategy `{strategy}` needs a trained edge net"))
}

/// Argmax label masks predicted for each sample.
pub fn predict_masks(seg: &SegNetParams, samples: &[Sample]) -> Result<Vec<LabelMask>> {
    samples
        .par_iter()
        .map(|s| prediction_mask(&seg.forward(&s.image)?.probs))
        .collect()
}

/// Dataset-wide mIoU of the segmentation net.
pub fn validation_miou(seg: &SegNetParams, samples: &[Sample]) -> Result<f64> {
    let preds = predict_masks(seg, samples)?;
    let gts: Vec<LabelMask> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok(miou(&dataset_confusion(&preds, &gts, seg.classes())?)?.miou)
}

/// Phase 2: trains the segmentation net under the configured strategy. The
/// edge net is only read.
pub fn train_seg_net(
    train: &[Sample],
    val: &[Sample],
    classes: usize,
    edge_net: Option<&EdgeNetParams>,
    cfg: &TrainConfig,
) -> Result<SegTraining> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("segmentation training needs at least one sample".into()));
    }
    let strategy = cfg.loss.strategy;
    if strategy.needs_edge_net() {
        let net = edge_net.ok_or_else(|| missing_edge_net(strategy))?;
        if net.classes() != classes {
            return Err(Error::InvalidArgument(format!(
                "edge net was trained for {} classes, dataset has {classes}",
                net.classes()
            )));
        }
    }
    for s in train.iter().chain(val) {
        s.mask.check_classes(classes).map_err(|e| Error::Data(format!("sample {}: {e}", s.id)))?;
    }
    let init = SegNetParams::init(classes, strategy.needs_edge_head(), mix_seed(cfg.seed, &[STREAM_INIT, STREAM_SEG]))?;
    let mut params = Params::Seg(init);
    let mut opt = Optimizer::new(&params);
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.seg_epochs);

    for epoch in 1..=cfg.seg_epochs {
        let order = epoch_order(train.len(), cfg.seed, STREAM_SEG, epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let Params::Seg(seg) = &params else { unreachable!() };
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let s = &train[i];
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[STREAM_SEG, epoch as u64, i as u64]));
                    let (image, mask) = augment(&s.image, &s.mask, cfg.mirror, cfg.crop, &mut rng)?;
                    let out = seg_sample(seg, edge_net, image, &mask, &cfg.loss)?;
                    check_finite(out.0, Phase::Seg, epoch, &s.id)?;
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_mean(per_sample)?;
            total += loss;
            opt.step(&mut params, grads, cfg.seg_lr, cfg.clip_norm, cfg)?;
        }
        let Params::Seg(seg) = &params else { unreachable!() };
        let val_miou = if val.is_empty() {
            None
        } else {
            Some(validation_miou(seg, val)?)
        };
        history.push(EpochRecord {
            epoch,
            phase: Phase::Seg,
            loss: total / train.len() as f64,
            val_miou,
            wall_seconds: elapsed(&start, cfg),
        });
    }
    Ok(SegTraining {
        params: params.into_seg()?,
        history,
    })
}
