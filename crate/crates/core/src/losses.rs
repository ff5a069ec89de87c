//! Segmentation objectives: per-pixel cross-entropy (PPCE), the multi-task
//! edge-head baseline, PPCE on predicted edges, and embedding matching inside
//! a frozen edge net.
//!
//! Every objective comes in two forms: a `*_on` builder that records the loss
//! on a [`Tape`] so training can backpropagate through it, and a plain
//! function that evaluates the same builder on a scratch tape.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mask::{EdgeMap, LabelMask, VOID};
use crate::nets::{EdgeNetParams, LayerNodes, EDGE_NET_DEPTH};
use crate::tape::{NodeId, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Plain per-pixel cross-entropy.
    Ppce,
    /// Extra edge head on the segmentation trunk, supervised with PPCE.
    Multitask,
    /// PPCE between the frozen edge net's prediction on `Ŝ` and the true edges.
    PpceOnEdges,
    /// L1 (or L2) matching of edge-net embeddings of `Ŝ` and `S*`.
    Semeda,
}

impl Strategy {
    pub fn needs_edge_net(self) -> bool {
        matches!(self, Strategy::PpceOnEdges | Strategy::Semeda)
    }

    pub fn needs_edge_head(self) -> bool {
        self == Strategy::Multitask
    }
}

/// Which side of the ReLU the embeddings are compared on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchPoint {
    BeforeRelu,
    AfterRelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    L1,
    /// Squared difference.
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// PPCE averages over non-void pixels; embedding terms average over pixels.
    Mean,
    /// Plain sums over pixels.
    Sum,
}

/// What the third-layer weight compares. The last edge-net layer has no ReLU,
/// so it is either the pre-softmax logits or the softmax output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer3Embedding {
    Logits,
    Softmax,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text $(| $alias)* => Ok(Self::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        "unknown {} `{other}` (expected one of: {})",
                        stringify!($ty),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(Strategy {
    Ppce => "ppce",
    Multitask => "multitask",
    PpceOnEdges => "ppce_on_edges" | "ppce-on-edges",
    Semeda => "semeda",
});
text_enum!(MatchPoint { BeforeRelu => "before" | "before_relu", AfterRelu => "after" | "after_relu" });
text_enum!(Distance { L1 => "l1", L2 => "l2" });
text_enum!(Reduction { Mean => "mean", Sum => "sum" });
text_enum!(Layer3Embedding { Logits => "logits", Softmax => "softmax" });

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub strategy: Strategy,
    /// Per-layer weights. Multitask and PPCE-on-edges read only the first.
    pub lambdas: [f64; 3],
    pub match_point: MatchPoint,
    pub distance: Distance,
    pub reduction: Reduction,
    pub layer3: Layer3Embedding,
    pub void_id: u8,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Semeda,
            lambdas: [0.0, 1.0, 0.0],
            match_point: MatchPoint::BeforeRelu,
            distance: Distance::L1,
            reduction: Reduction::Mean,
            layer3: Layer3Embedding::Logits,
            void_id: VOID,
        }
    }
}

impl LossConfig {
    pub fn ppce() -> Self {
        Self {
            strategy: Strategy::Ppce,
            ..Self::default()
        }
    }

    pub fn semeda(lambdas: [f64; 3], match_point: MatchPoint) -> Self {
        Self {
            strategy: Strategy::Semeda,
            lambdas,
            match_point,
            ..Self::default()
        }
    }

    /// Multitask or PPCE-on-edges with edge weight `lambda1`.
    pub fn edge_term(strategy: Strategy, lambda1: f64) -> Self {
        Self {
            strategy,
            lambdas: [lambda1, 0.0, 0.0],
            ..Self::default()
        }
    }

    /// Rejects negative or non-finite weights. All-zero weights are accepted
    /// here since they reduce every strategy to plain PPCE.
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative, got {l}"
            )));
        }
        Ok(())
    }

    /// Whether the edge terms carry any weight under this strategy.
    pub fn has_edge_weight(&self) -> bool {
        match self.strategy {
            Strategy::Ppce => false,
            Strategy::Multitask | Strategy::PpceOnEdges => self.lambdas[0] > 0.0,
            Strategy::Semeda => self.lambdas.iter().any(|&l| l > 0.0),
        }
    }
}

fn check_dims(pred: &Grid, height: usize, width: usize) -> Result<()> {
    let (_, h, w) = pred.chw()?;
    if (h, w) != (height, width) {
        return Err(Error::Shape(format!(
            "prediction is {h}×{w} but target is {height}×{width}"
        )));
    }
    Ok(())
}

/// Records `−Σ log p[target]` over non-void pixels, divided by their count
/// under [`Reduction::Mean`].
pub fn ppce_on(tape: &mut Tape, pred: NodeId, targets: Vec<Option<usize>>, reduction: Reduction) -> Result<NodeId> {
    let counted = targets.iter().filter(|t| t.is_some()).count();
    if counted == 0 {
        return Err(Error::InvalidArgument(
            "cross-entropy is undefined when every pixel is void".into(),
        ));
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / counted as f64,
        Reduction::Sum => 1.0,
    };
    tape.nll(pred, targets, scale)
}

/// Embedding layers selected by the config, as `(layer index, weight)`.
fn weighted_layers(config: &LossConfig) -> impl Iterator<Item = (usize, f64)> + '_ {
    config
        .lambdas
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, l)| l > 0.0)
}

fn pick_embedding(emb: &crate::nets::EmbeddingNodes, layer: usize, config: &LossConfig) -> NodeId {
    let use_post = if layer + 1 == EDGE_NET_DEPTH {
        config.layer3 == Layer3Embedding::Softmax
    } else {
        config.match_point == MatchPoint::AfterRelu
    };
    if use_post {
        emb.post[layer]
    } else {
        emb.pre[layer]
    }
}

/// Records the embedding-matching loss between `pred` (tracked) and `gt`.
/// The edge net must be registered on the tape as constants.
///
/// Returns `None` when every weight is zero, so callers can leave the term
/// out entirely instead of adding an exact zero.
pub fn semeda_on(
    tape: &mut Tape,
    pred: NodeId,
    gt: NodeId,
    edge_net: &EdgeNetParams,
    edge_nodes: &[LayerNodes],
    config: &LossConfig,
) -> Result<Option<NodeId>> {
    let Some(depth) = weighted_layers(config).map(|(l, _)| l + 1).max() else {
        return Ok(None);
    };
    let pred_emb = edge_net.forward_on(tape, pred, edge_nodes, depth)?;
    let gt_emb = edge_net.forward_on(tape, gt, edge_nodes, depth)?;
    let (_, h, w) = tape.value(pred).chw()?;
    let pixels = (h * w) as f64;

    let mut total: Option<NodeId> = None;
    for (layer, weight) in weighted_layers(config) {
        let a = pick_embedding(&pred_emb, layer, config);
        let b = pick_embedding(&gt_emb, layer, config);
        if tape.value(a).shape() != tape.value(b).shape() {
            return Err(Error::Shape(format!(
                "internal: layer {} embeddings disagree, {:?} vs {:?}",
                layer + 1,
                tape.value(a).shape(),
                tape.value(b).shape()
            )));
        }
        let diff = tape.sub(a, b)?;
        let dist = match config.distance {
            Distance::L1 => tape.abs(diff),
            Distance::L2 => tape.square(diff),
        };
        let summed = tape.sum(dist);
        let factor = match config.reduction {
            Reduction::Mean => weight / pixels,
            Reduction::Sum => weight,
        };
        let term = tape.scale(summed, factor);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total)
}

/// Records PPCE between the edge net's prediction on `pred` and `gt_edges`.
pub fn edge_ppce_on(
    tape: &mut Tape,
    pred: NodeId,
    edge_net: &EdgeNetParams,
    edge_nodes: &[LayerNodes],
    gt_edges: &EdgeMap,
    reduction: Reduction,
) -> Result<NodeId> {
    check_dims(tape.value(pred), gt_edges.height(), gt_edges.width())?;
    let emb = edge_net.forward_on(tape, pred, edge_nodes, EDGE_NET_DEPTH)?;
    ppce_on(tape, emb.post[EDGE_NET_DEPTH - 1], gt_edges.class_targets(), reduction)
}

/// `a + weight·b`, leaving `b` out when the weight is zero.
fn add_weighted(tape: &mut Tape, a: NodeId, b: Option<NodeId>, weight: f64) -> Result<NodeId> {
    match b {
        Some(b) if weight != 0.0 => {
            let scaled = if weight == 1.0 { b } else { tape.scale(b, weight) };
            tape.add(a, scaled)
        }
        _ => Ok(a),
    }
}

/// PPCE on the segmentation head plus `λ₁`·PPCE on the edge head.
pub fn multitask_on(
    tape: &mut Tape,
    seg_pred: NodeId,
    edge_head_pred: NodeId,
    target: &LabelMask,
    gt_edges: &EdgeMap,
    lambda1: f64,
    reduction: Reduction,
) -> Result<NodeId> {
    check_dims(tape.value(seg_pred), target.height(), target.width())?;
    check_dims(tape.value(edge_head_pred), gt_edges.height(), gt_edges.width())?;
    let seg = ppce_on(tape, seg_pred, target.class_targets(), reduction)?;
    let edge = if lambda1 != 0.0 {
        Some(ppce_on(tape, edge_head_pred, gt_edges.class_targets(), reduction)?)
    } else {
        None
    };
    add_weighted(tape, seg, edge, lambda1)
}

/// PPCE plus the edge term of a [`Strategy::Semeda`] or
/// [`Strategy::PpceOnEdges`] config.
#[allow(clippy::too_many_arguments)]
pub fn total_on(
    tape: &mut Tape,
    pred: NodeId,
    target: &LabelMask,
    gt_one_hot: NodeId,
    gt_edges: &EdgeMap,
    edge_net: &EdgeNetParams,
    edge_nodes: &[LayerNodes],
    config: &LossConfig,
) -> Result<NodeId> {
    check_dims(tape.value(pred), target.height(), target.width())?;
    let base = ppce_on(tape, pred, target.class_targets(), config.reduction)?;
    match config.strategy {
        Strategy::Semeda => {
            let term = semeda_on(tape, pred, gt_one_hot, edge_net, edge_nodes, config)?;
            add_weighted(tape, base, term, 1.0)
        }
        Strategy::PpceOnEdges => {
            let lambda1 = config.lambdas[0];
            let term = if lambda1 != 0.0 {
                Some(edge_ppce_on(tape, pred, edge_net, edge_nodes, gt_edges, config.reduction)?)
            } else {
                None
            };
            add_weighted(tape, base, term, lambda1)
        }
        other => Err(Error::InvalidArgument(format!(
            "total loss combines PPCE with an edge-net term; strategy `{other}` has none"
        ))),
    }
}

fn scalar(tape: &Tape, node: NodeId) -> f64 {
    tape.value(node).data()[0]
}

/// Mean per-pixel cross-entropy of `pred` against `target`, skipping void.
pub fn ppce(pred: &Grid, target: &LabelMask) -> Result<f64> {
    check_dims(pred, target.height(), target.width())?;
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let l = ppce_on(&mut tape, p, target.class_targets(), Reduction::Mean)?;
    Ok(scalar(&tape, l))
}

/// Weighted embedding distance between two masks under a frozen edge net.
pub fn semeda_loss(pred_mask: &Grid, gt_mask: &Grid, edge_net: &EdgeNetParams, config: &LossConfig) -> Result<f64> {
    pred_mask.expect_same_shape(gt_mask)?;
    let mut tape = Tape::new();
    let nodes = edge_net.register(&mut tape, false);
    let p = tape.constant(pred_mask.clone());
    let g = tape.constant(gt_mask.clone());
    Ok(semeda_on(&mut tape, p, g, edge_net, &nodes, config)?
        .map(|n| scalar(&tape, n))
        .unwrap_or(0.0))
}

/// Mean cross-entropy between the edge net's prediction on `pred_mask` and
/// the ground-truth edges.
pub fn edge_ppce_loss(pred_mask: &Grid, edge_net: &EdgeNetParams, gt_edges: &EdgeMap) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = edge_net.register(&mut tape, false);
    let p = tape.constant(pred_mask.clone());
    let l = edge_ppce_on(&mut tape, p, edge_net, &nodes, gt_edges, Reduction::Mean)?;
    Ok(scalar(&tape, l))
}

pub fn multitask_loss(
    seg_pred: &Grid,
    edge_head_pred: &Grid,
    target: &LabelMask,
    gt_edges: &EdgeMap,
    lambda1: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(seg_pred.clone());
    let e = tape.constant(edge_head_pred.clone());
    let l = multitask_on(&mut tape, s, e, target, gt_edges, lambda1, Reduction::Mean)?;
    Ok(scalar(&tape, l))
}

pub fn total_loss(
    pred_mask: &Grid,
    target: &LabelMask,
    gt_one_hot: &Grid,
    edge_net: &EdgeNetParams,
    config: &LossConfig,
) -> Result<f64> {
    let gt_edges = crate::mask::extract_edge_map(target);
    let mut tape = Tape::new();
    let nodes = edge_net.register(&mut tape, false);
    let p = tape.constant(pred_mask.clone());
    let g = tape.constant(gt_one_hot.clone());
    let l = total_on(&mut tape, p, target, g, &gt_edges, edge_net, &nodes, config)?;
    Ok(scalar(&tape, l))
}
