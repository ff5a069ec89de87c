//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{mix_seed, one_hot};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::{self, LossConfig, MatchPoint, Reduction, Strategy};
use crate::mask::{extract_edge_map, LabelMask, VOID};
use crate::nets::{EdgeNetParams, SegNetParams};
use crate::tape::{NodeId, Tape};

/// Relative error `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between the tape gradient of `build` at `point`
/// and central differences `(f(x+ε) − f(x−ε)) / 2ε` per coordinate.
///
/// `build` receives a tape and the node holding the point and must return a
/// scalar loss node.
pub fn finite_diff_check<F>(point: &Grid, eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    Ok(check(point, eps, &build, false)?.expect("kinks are not checked"))
}

/// Like [`finite_diff_check`], but returns `None` when any probe lands on a
/// different side of a ReLU or abs kink than the base point, where central
/// differences do not estimate the derivative.
pub fn finite_diff_check_smooth<F>(point: &Grid, eps: f64, build: F) -> Result<Option<f64>>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    check(point, eps, &build, true)
}

fn check<F>(point: &Grid, eps: f64, build: &F, smooth_only: bool) -> Result<Option<f64>>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let loss = build(&mut tape, x)?;
    let grads = tape.backprop(loss)?;
    let analytic = grads.get_or_zeros(x, point);
    let base_signs = smooth_only.then(|| tape.kink_signs());

    // Value at `p`, or `None` when it sits on another smooth piece.
    let eval = |p: Grid| -> Result<Option<f64>> {
        let mut t = Tape::new();
        let x = t.constant(p);
        let l = build(&mut t, x)?;
        if base_signs.as_ref().is_some_and(|s| *s != t.kink_signs()) {
            return Ok(None);
        }
        t.value(l)
            .item()
            .map(Some)
            .ok_or_else(|| Error::Shape("finite-difference target is not scalar".into()))
    };

    let mut worst = 0.0_f64;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let (Some(fp), Some(fm)) = (eval(plus)?, eval(minus)?) else {
            return Ok(None);
        };
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(Some(worst))
}

/// Step used by the suite.
pub const SUITE_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

fn random_grid(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Grid {
    Grid::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn random_mask(rng: &mut ChaCha8Rng, classes: usize, h: usize, w: usize, void: bool) -> LabelMask {
    // Blocky masks so edge maps are neither empty nor everywhere.
    let labels = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if void && rng.random_bool(0.1) {
                VOID
            } else if rng.random_bool(0.2) {
                rng.random_range(0..classes) as u8
            } else {
                ((y / 3 + x / 3) % classes) as u8
            }
        })
        .collect();
    LabelMask::new(h, w, labels).expect("dims match")
}

type CaseFn = fn(&mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)>;

fn squared_error(tape: &mut Tape, y: NodeId, target: Grid) -> Result<NodeId> {
    let t = tape.constant(target);
    let d = tape.sub(y, t)?;
    let sq = tape.square(d);
    Ok(tape.sum(sq))
}

fn case_conv_input(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let stride = rng.random_range(1..=2);
    let x = random_grid(rng, &[3, 8, 8], 1.0);
    let k = random_grid(rng, &[4, 3, 3, 3], 0.5);
    let b = random_grid(rng, &[4], 0.5);
    let target = random_grid(rng, &[4, 8usize.div_ceil(stride), 8usize.div_ceil(stride)], 1.0);
    Ok((
        x,
        Box::new(move |t, x| {
            let (k, b) = (t.constant(k.clone()), t.constant(b.clone()));
            let y = t.conv2d(x, k, b, stride)?;
            squared_error(t, y, target.clone())
        }),
    ))
}

fn case_conv_kernel(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let stride = rng.random_range(1..=2);
    let x = random_grid(rng, &[1, 4, 4], 1.0);
    let k = random_grid(rng, &[4, 1, 3, 3], 0.5);
    let b = random_grid(rng, &[4], 0.5);
    let target = random_grid(rng, &[4, 4 / stride, 4 / stride], 1.0);
    Ok((
        k,
        Box::new(move |t, k| {
            let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
            let y = t.conv2d(x, k, b, stride)?;
            squared_error(t, y, target.clone())
        }),
    ))
}

fn case_conv_bias(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let x = random_grid(rng, &[2, 6, 6], 1.0);
    let k = random_grid(rng, &[3, 2, 1, 1], 0.5);
    let b = random_grid(rng, &[3], 0.5);
    let target = random_grid(rng, &[3, 6, 6], 1.0);
    Ok((
        b,
        Box::new(move |t, b| {
            let (x, k) = (t.constant(x.clone()), t.constant(k.clone()));
            let y = t.conv2d(x, k, b, 1)?;
            squared_error(t, y, target.clone())
        }),
    ))
}

fn case_relu(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let x = random_grid(rng, &[4, 8, 8], 1.0);
    let target = random_grid(rng, &[4, 8, 8], 1.0);
    Ok((
        x,
        Box::new(move |t, x| {
            let y = t.relu(x);
            squared_error(t, y, target.clone())
        }),
    ))
}

fn case_softmax(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let x = random_grid(rng, &[4, 8, 8], 2.0);
    let target = random_grid(rng, &[4, 8, 8], 1.0);
    Ok((
        x,
        Box::new(move |t, x| {
            let y = t.channel_softmax(x)?;
            squared_error(t, y, target.clone())
        }),
    ))
}

fn case_upsample(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let factor = rng.random_range(2..=3);
    let x = random_grid(rng, &[3, 4, 4], 1.0);
    let target = random_grid(rng, &[3, 4 * factor, 4 * factor], 1.0);
    Ok((
        x,
        Box::new(move |t, x| {
            let y = t.bilinear_upsample(x, factor)?;
            squared_error(t, y, target.clone())
        }),
    ))
}

fn case_ppce(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let logits = random_grid(rng, &[4, 8, 8], 2.0);
    let mut target = random_mask(rng, 4, 8, 8, true);
    target.set(0, 0, 0);
    Ok((
        logits,
        Box::new(move |t, x| {
            let p = t.channel_softmax(x)?;
            losses::ppce_on(t, p, target.class_targets(), Reduction::Mean)
        }),
    ))
}

/// conv → relu → conv → softmax → PPCE on a 2-class 4×4 problem.
fn case_pipeline(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let x = random_grid(rng, &[2, 4, 4], 1.0);
    let k1 = random_grid(rng, &[4, 2, 3, 3], 0.7);
    let b1 = random_grid(rng, &[4], 0.3);
    let k2 = random_grid(rng, &[2, 4, 3, 3], 0.7);
    let b2 = random_grid(rng, &[2], 0.3);
    let target = random_mask(rng, 2, 4, 4, false);
    Ok((
        x,
        Box::new(move |t, x| {
            let (k1, b1) = (t.constant(k1.clone()), t.constant(b1.clone()));
            let (k2, b2) = (t.constant(k2.clone()), t.constant(b2.clone()));
            let h = t.conv2d(x, k1, b1, 1)?;
            let h = t.relu(h);
            let z = t.conv2d(h, k2, b2, 1)?;
            let p = t.channel_softmax(z)?;
            losses::ppce_on(t, p, target.class_targets(), Reduction::Mean)
        }),
    ))
}

fn edge_setup(rng: &mut ChaCha8Rng, classes: usize, h: usize, w: usize) -> Result<(Grid, EdgeNetParams, LabelMask)> {
    let logits = random_grid(rng, &[classes, h, w], 2.0);
    let net = EdgeNetParams::init(classes, rng.random())?;
    let gt = random_mask(rng, classes, h, w, false);
    Ok((logits, net, gt))
}

fn case_edge_ppce(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let (logits, net, gt) = edge_setup(rng, 3, 6, 6)?;
    let edges = extract_edge_map(&gt);
    Ok((
        logits,
        Box::new(move |t, x| {
            let nodes = net.register(t, false);
            let p = t.channel_softmax(x)?;
            losses::edge_ppce_on(t, p, &net, &nodes, &edges, Reduction::Mean)
        }),
    ))
}

fn semeda_case(rng: &mut ChaCha8Rng, match_point: MatchPoint) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let (logits, net, gt) = edge_setup(rng, 3, 6, 6)?;
    let gt_hot = one_hot(&gt, 3)?;
    let cfg = LossConfig::semeda([1.0, 0.5, 0.25], match_point);
    Ok((
        logits,
        Box::new(move |t, x| {
            let nodes = net.register(t, false);
            let p = t.channel_softmax(x)?;
            let g = t.constant(gt_hot.clone());
            losses::semeda_on(t, p, g, &net, &nodes, &cfg)?
                .ok_or_else(|| Error::InvalidArgument("semeda weights are all zero".into()))
        }),
    ))
}

fn case_semeda_before(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    semeda_case(rng, MatchPoint::BeforeRelu)
}

fn case_semeda_after(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    semeda_case(rng, MatchPoint::AfterRelu)
}

fn case_total(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let (logits, net, gt) = edge_setup(rng, 3, 6, 6)?;
    let gt_hot = one_hot(&gt, 3)?;
    let edges = extract_edge_map(&gt);
    let cfg = LossConfig::default();
    Ok((
        logits,
        Box::new(move |t, x| {
            let nodes = net.register(t, false);
            let p = t.channel_softmax(x)?;
            let g = t.constant(gt_hot.clone());
            losses::total_on(t, p, &gt, g, &edges, &net, &nodes, &cfg)
        }),
    ))
}

fn case_total_edges(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let (logits, net, gt) = edge_setup(rng, 3, 6, 6)?;
    let gt_hot = one_hot(&gt, 3)?;
    let edges = extract_edge_map(&gt);
    let cfg = LossConfig::edge_term(Strategy::PpceOnEdges, 5.0);
    Ok((
        logits,
        Box::new(move |t, x| {
            let nodes = net.register(t, false);
            let p = t.channel_softmax(x)?;
            let g = t.constant(gt_hot.clone());
            losses::total_on(t, p, &gt, g, &edges, &net, &nodes, &cfg)
        }),
    ))
}

fn seg_net_case(
    rng: &mut ChaCha8Rng,
    wrt_classifier: bool,
) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let seg = SegNetParams::init(2, false, rng.random())?;
    let net = EdgeNetParams::init(2, rng.random())?;
    let image = Grid::from_fn(&[3, 8, 8], |_| rng.random_range(0.0..1.0));
    let gt = random_mask(rng, 2, 8, 8, false);
    let gt_hot = one_hot(&gt, 2)?;
    let edges = extract_edge_map(&gt);
    let cfg = match rng.random_range(0..3) {
        0 => LossConfig::ppce(),
        1 => LossConfig::edge_term(Strategy::PpceOnEdges, 1.0),
        _ => LossConfig::semeda([1.0, 0.5, 0.25], MatchPoint::BeforeRelu),
    };
    let classifier = seg.layers().len() - 1;
    let point = if wrt_classifier {
        seg.layers()[classifier].kernel.clone()
    } else {
        image.clone()
    };
    Ok((
        point,
        Box::new(move |t, p| {
            let mut nodes = seg.register(t, false);
            let img = if wrt_classifier {
                nodes.trunk[classifier].kernel = p;
                t.constant(image.clone())
            } else {
                p
            };
            let out = seg.forward_on(t, img, &nodes)?;
            if cfg.strategy == Strategy::Ppce {
                return losses::ppce_on(t, out.probs, gt.class_targets(), cfg.reduction);
            }
            let en = net.register(t, false);
            let g = t.constant(gt_hot.clone());
            losses::total_on(t, out.probs, &gt, g, &edges, &net, &en, &cfg)
        }),
    ))
}

/// Segmentation net end to end on a 2-class 8×8 problem, differentiated with
/// respect to the input image under a randomly chosen loss.
fn case_seg_net(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    seg_net_case(rng, false)
}

/// As [`case_seg_net`], differentiated with respect to the classifier kernel.
fn case_seg_classifier(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    seg_net_case(rng, true)
}

/// Multitask loss through the segmentation net, w.r.t. the edge-head kernel.
fn case_multitask(rng: &mut ChaCha8Rng) -> Result<(Grid, Box<dyn Fn(&mut Tape, NodeId) -> Result<NodeId>>)> {
    let seg = SegNetParams::init(3, true, rng.random())?;
    let image = Grid::from_fn(&[3, 8, 8], |_| rng.random_range(0.0..1.0));
    let gt = random_mask(rng, 3, 8, 8, false);
    let edges = extract_edge_map(&gt);
    let point = seg.edge_head().expect("head").kernel.clone();
    Ok((
        point,
        Box::new(move |t, k| {
            let mut nodes = seg.register(t, false);
            nodes.edge_head.as_mut().expect("head").kernel = k;
            let img = t.constant(image.clone());
            let out = seg.forward_on(t, img, &nodes)?;
            let head = out.edge_probs.expect("head enabled");
            losses::multitask_on(t, out.probs, head, &gt, &edges, 1.0, Reduction::Mean)
        }),
    ))
}

const CASES: &[(&str, CaseFn)] = &[
    ("conv2d_input", case_conv_input),
    ("conv2d_kernel", case_conv_kernel),
    ("conv2d_bias", case_conv_bias),
    ("relu", case_relu),
    ("channel_softmax", case_softmax),
    ("bilinear_upsample", case_upsample),
    ("ppce", case_ppce),
    ("conv_relu_softmax_ppce", case_pipeline),
    ("ppce_on_edges", case_edge_ppce),
    ("semeda_before_relu", case_semeda_before),
    ("semeda_after_relu", case_semeda_after),
    ("total_semeda", case_total),
    ("total_ppce_on_edges", case_total_edges),
    ("multitask", case_multitask),
    ("seg_net_end_to_end", case_seg_net),
    ("seg_net_classifier", case_seg_classifier),
];

/// Runs every primitive and composite loss on `instances` random draws each
/// and reports the worst relative error per case.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<Vec<SuiteResult>> {
    CASES
        .iter()
        .enumerate()
        .map(|(ci, &(name, case))| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[ci as u64]));
            let mut worst = 0.0_f64;
            let mut done = 0;
            let mut attempts = 0;
            while done < instances {
                attempts += 1;
                if attempts > instances * 20 {
                    return Err(Error::Numeric(format!("{name}: could not draw instances away from kinks")));
                }
                let (point, build) = case(&mut rng)?;
                if let Some(err) = finite_diff_check_smooth(&point, SUITE_EPS, &build)? {
                    worst = worst.max(err);
                    done += 1;
                }
            }
            Ok(SuiteResult {
                name,
                instances,
                max_rel_error: worst,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let point = Grid::from_fn(&[2, 3, 3], |i| i as f64 * 0.1 - 0.4);
        let err = finite_diff_check(&point, 1e-4, |t, x| {
            let y = t.scale(x, 3.0);
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn zero_step_rejected() {
        let point = Grid::zeros(&[2]);
        assert!(finite_diff_check(&point, 0.0, |t, x| Ok(t.sum(x))).is_err());
    }

    #[test]
    fn smooth_variant_flags_a_straddled_kink() {
        let point = Grid::filled(&[1], 0.0);
        let build = |t: &mut Tape, x: NodeId| {
            let c = t.constant(Grid::filled(&[1], 5e-4));
            let d = t.sub(x, c)?;
            let a = t.abs(d);
            Ok(t.sum(a))
        };
        assert_eq!(finite_diff_check_smooth(&point, 1e-3, build).unwrap(), None);
        assert!(finite_diff_check_smooth(&point, 1e-4, build).unwrap().unwrap() < 1e-9);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // |x| at x = 0 has subgradient 0 but a symmetric difference of 0 too;
        // use the kink offset instead: f = sum(|x − 0.5ε|) straddles the kink.
        let point = Grid::filled(&[1], 0.0);
        let err = finite_diff_check(&point, 1e-3, |t, x| {
            let c = t.constant(Grid::filled(&[1], 5e-4));
            let d = t.sub(x, c)?;
            let a = t.abs(d);
            Ok(t.sum(a))
        })
        .unwrap();
        assert!(err > 0.1, "{err}");
    }
}
