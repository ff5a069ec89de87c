//! Reverse-mode differentiation over a linear tape.
//!
//! Each call on [`Tape`] evaluates one primitive eagerly and appends an entry
//! holding the result and the ids of its inputs, so entries are always in
//! topological order. [`Tape::backprop`] sweeps the entries once in reverse.
//! Only nodes that transitively depend on a [`Tape::param`] leaf receive
//! gradients; [`Tape::constant`] leaves and everything computed purely from
//! them are skipped.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ops;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
    },
    Relu(NodeId),
    Softmax(NodeId),
    Upsample {
        input: NodeId,
        factor: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Abs(NodeId),
    Square(NodeId),
    Sum(NodeId),
    /// `−scale · Σ log(max(p[target], LOG_FLOOR))` over the non-void pixels of
    /// a `C×H×W` probability grid.
    Nll {
        probs: NodeId,
        targets: Vec<Option<usize>>,
        scale: f64,
    },
}

#[derive(Debug)]
struct Entry {
    op: Op,
    value: Grid,
    tracked: bool,
}

/// Single-threaded record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Grid) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf whose gradient is reported by [`Tape::backprop`].
    pub fn param(&mut self, value: Grid) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, id: NodeId) -> &Grid {
        &self.entries[id.0].value
    }

    /// Whether a gradient will flow into this node.
    pub fn is_tracked(&self, id: NodeId) -> bool {
        self.entries[id.0].tracked
    }

    fn push(&mut self, op: Op, value: Grid, tracked: bool) -> NodeId {
        self.entries.push(Entry { op, value, tracked });
        NodeId(self.entries.len() - 1)
    }

    fn tracked_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.is_tracked(id))
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId, stride: usize) -> Result<NodeId> {
        let value = ops::conv2d(self.value(input), self.value(kernel), self.value(bias), stride)?;
        let tracked = self.tracked_any(&[input, kernel, bias]);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            },
            value,
            tracked,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = ops::relu(self.value(x));
        let tracked = self.is_tracked(x);
        self.push(Op::Relu(x), value, tracked)
    }

    pub fn channel_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let value = ops::channel_softmax(self.value(x))?;
        let tracked = self.is_tracked(x);
        Ok(self.push(Op::Softmax(x), value, tracked))
    }

    pub fn bilinear_upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let value = ops::bilinear_upsample(self.value(x), factor)?;
        let tracked = self.is_tracked(x);
        Ok(self.push(Op::Upsample { input: x, factor }, value, tracked))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_with(self.value(b), |p, q| p + q)?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, tracked))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_with(self.value(b), |p, q| p - q)?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, tracked))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        let tracked = self.is_tracked(x);
        self.push(Op::Scale(x, factor), value, tracked)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::abs);
        let tracked = self.is_tracked(x);
        self.push(Op::Abs(x), value, tracked)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v * v);
        let tracked = self.is_tracked(x);
        self.push(Op::Square(x), value, tracked)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Grid::scalar(self.value(x).sum());
        let tracked = self.is_tracked(x);
        self.push(Op::Sum(x), value, tracked)
    }

    /// Negative log-likelihood of per-pixel class targets under a `C×H×W`
    /// probability grid, multiplied by `scale`. `None` targets are skipped.
    pub fn nll(&mut self, probs: NodeId, targets: Vec<Option<usize>>, scale: f64) -> Result<NodeId> {
        let p = self.value(probs);
        let (c, h, w) = p.chw()?;
        if targets.len() != h * w {
            return Err(Error::Shape(format!(
                "{} targets for a {h}×{w} prediction",
                targets.len()
            )));
        }
        let plane = h * w;
        let mut total = 0.0;
        for (px, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= c {
                    return Err(Error::InvalidArgument(format!(
                        "target class {t} at pixel {px} exceeds {c} channels"
                    )));
                }
                total += p.data()[t * plane + px].max(ops::LOG_FLOOR).ln();
            }
        }
        let value = Grid::scalar(-scale * total);
        let tracked = self.is_tracked(probs);
        Ok(self.push(
            Op::Nll {
                probs,
                targets,
                scale,
            },
            value,
            tracked,
        ))
    }

    /// Sign pattern (`x > 0`) of every ReLU and abs input, in tape order.
    /// Two evaluations of one graph with equal patterns lie on the same
    /// smooth piece.
    pub fn kink_signs(&self) -> Vec<bool> {
        self.entries
            .iter()
            .filter_map(|e| match e.op {
                Op::Relu(x) | Op::Abs(x) => Some(self.value(x).data().iter().map(|&v| v > 0.0)),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backprop(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backprop needs a scalar loss, node {} has shape {:?}",
                loss.0,
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Grid>> = vec![None; self.entries.len()];
        if !self.is_tracked(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Grid::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else { continue };
            let entry = &self.entries[idx];
            self.propagate(&entry.op, &entry.value, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, out: &Grid, g: &Grid, grads: &mut [Option<Grid>]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            } => {
                let want_params = self.is_tracked(kernel) || self.is_tracked(bias);
                let cg = ops::conv2d_backward(
                    self.value(input),
                    self.value(kernel),
                    stride,
                    g,
                    self.is_tracked(input),
                    want_params,
                )?;
                if let Some(dx) = cg.input {
                    self.accumulate(grads, input, dx)?;
                }
                if let (Some(dk), Some(db)) = (cg.kernel, cg.bias) {
                    self.accumulate(grads, kernel, dk)?;
                    self.accumulate(grads, bias, db)?;
                }
            }
            Op::Relu(x) => {
                let dx = ops::relu_backward(self.value(x), g);
                self.accumulate(grads, x, dx)?;
            }
            Op::Softmax(x) => {
                let dx = ops::channel_softmax_backward(out, g)?;
                self.accumulate(grads, x, dx)?;
            }
            Op::Upsample { input, factor } => {
                let dx = ops::bilinear_upsample_backward(self.value(input).shape(), factor, g)?;
                self.accumulate(grads, input, dx)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.map(|v| -v))?;
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, x, g.map(|v| v * factor))?;
            }
            Op::Abs(x) => {
                let dx = self.value(x).zip_with(g, |v, gv| {
                    if v > 0.0 {
                        gv
                    } else if v < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })?;
                self.accumulate(grads, x, dx)?;
            }
            Op::Square(x) => {
                let dx = self.value(x).zip_with(g, |v, gv| 2.0 * v * gv)?;
                self.accumulate(grads, x, dx)?;
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, x, Grid::filled(self.value(x).shape(), gv))?;
            }
            Op::Nll {
                probs,
                ref targets,
                scale,
            } => {
                let p = self.value(probs);
                let plane = targets.len();
                let gv = g.data()[0];
                let mut dp = Grid::zeros(p.shape());
                for (px, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let pv = p.data()[t * plane + px];
                        if pv > ops::LOG_FLOOR {
                            dp.data_mut()[t * plane + px] = -gv * scale / pv;
                        }
                    }
                }
                self.accumulate(grads, probs, dp)?;
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Grid>], id: NodeId, delta: Grid) -> Result<()> {
        if !self.is_tracked(id) {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }
}

/// Result of one backward sweep, indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Grid>>,
}

impl Gradients {
    /// Gradient of a node, or `None` when the loss does not depend on it
    /// through tracked nodes.
    pub fn get(&self, id: NodeId) -> Option<&Grid> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Grid> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }

    /// Gradient of a node, zero-filled to `like`'s shape when absent.
    pub fn get_or_zeros(&self, id: NodeId, like: &Grid) -> Grid {
        self.get(id).cloned().unwrap_or_else(|| Grid::zeros(like.shape()))
    }
}
