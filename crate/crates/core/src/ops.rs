//! Forward and backward kernels for the differentiable primitives.
//!
//! These are plain functions on [`Grid`]s. The [`crate::tape::Tape`] records
//! calls to them and replays the backward kernels in reverse.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Log clamp used by every cross-entropy in the crate.
pub const LOG_FLOOR: f64 = 1e-12;

/// `c = op(a) · op(b) + beta · c` on row-major buffers, where `op` optionally
/// transposes. `a` is `m×k` after `op`, `b` is `k×n`, `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above guarantee every index reachable through the
    // given strides lies within the three slices, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent of a same-padded convolution.
pub fn conv_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Geometry shared by the conv forward and backward passes.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(input: &Grid, kernel: &Grid, stride: usize) -> Result<Self> {
        let (cin, h, w) = input.chw()?;
        let &[cout, kcin, kh, kw] = kernel.shape() else {
            return Err(Error::Shape(format!(
                "conv2d kernel must be Cout×Cin×k×k, got {:?}",
                kernel.shape()
            )));
        };
        if kcin != cin {
            return Err(Error::Shape(format!(
                "conv2d input {:?} has {cin} channels but kernel {:?} expects {kcin}",
                input.shape(),
                kernel.shape()
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d kernel must be square with odd size, got {:?}",
                kernel.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        Ok(Self {
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            ho: conv_out_len(h, stride),
            wo: conv_out_len(w, stride),
        })
    }

    fn pad(&self) -> isize {
        ((self.k - 1) / 2) as isize
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// For output column `x` and kernel tap `kx`, the input column or `None`
    /// when it falls in the zero padding. Same formula serves rows.
    fn source(&self, out: usize, tap: usize, len: usize) -> Option<usize> {
        let s = (out * self.stride + tap) as isize - self.pad();
        (s >= 0 && (s as usize) < len).then_some(s as usize)
    }

    /// Range of output columns whose source for tap `tap` lies inside `[0, len)`.
    fn valid_range(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < out_len && self.source(lo, tap, len).is_none() {
            lo += 1;
        }
        let mut hi = out_len;
        while hi > lo && self.source(hi - 1, tap, len).is_none() {
            hi -= 1;
        }
        (lo, hi)
    }
}

/// Unfolds zero-padded input patches into a `(Cin·k·k) × (Ho·Wo)` matrix.
fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane_out = g.ho * g.wo;
    let mut col = vec![0.0; g.patch_len() * plane_out];
    for ci in 0..g.cin {
        let src = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * plane_out..(row + 1) * plane_out];
                let (x_lo, x_hi) = g.valid_range(kx, g.w, g.wo);
                for y in 0..g.ho {
                    let Some(iy) = g.source(y, ky, g.h) else { continue };
                    let src_row = &src[iy * g.w..(iy + 1) * g.w];
                    let dst_row = &mut dst[y * g.wo..(y + 1) * g.wo];
                    if g.stride == 1 {
                        let ix0 = x_lo + kx - g.pad() as usize;
                        dst_row[x_lo..x_hi].copy_from_slice(&src_row[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for x in x_lo..x_hi {
                            dst_row[x] = src_row[x * g.stride + kx - g.pad() as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the input.
fn col2im(col: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0; g.cin * g.h * g.w];
    for ci in 0..g.cin {
        let dst = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * plane_out..(row + 1) * plane_out];
                let (x_lo, x_hi) = g.valid_range(kx, g.w, g.wo);
                for y in 0..g.ho {
                    let Some(iy) = g.source(y, ky, g.h) else { continue };
                    let src_row = &src[y * g.wo..(y + 1) * g.wo];
                    let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        let ix0 = x_lo + kx - g.pad() as usize;
                        for (d, s) in dst_row[ix0..ix0 + (x_hi - x_lo)]
                            .iter_mut()
                            .zip(&src_row[x_lo..x_hi])
                        {
                            *d += s;
                        }
                    } else {
                        for x in x_lo..x_hi {
                            dst_row[x * g.stride + kx - g.pad() as usize] += src_row[x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Same-padded 2-D cross-correlation with per-output-channel bias.
///
/// `input` is `Cin×H×W`, `kernel` is `Cout×Cin×k×k` with odd `k`, `bias` has
/// `Cout` entries. Output is `Cout×⌈H/stride⌉×⌈W/stride⌉`.
pub fn conv2d(input: &Grid, kernel: &Grid, bias: &Grid, stride: usize) -> Result<Grid> {
    let g = ConvGeom::new(input, kernel, stride)?;
    if bias.len() != g.cout {
        return Err(Error::Shape(format!(
            "conv2d bias {:?} does not match kernel {:?}",
            bias.shape(),
            kernel.shape()
        )));
    }
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0; g.cout * plane_out];
    for (co, row) in out.chunks_mut(plane_out).enumerate() {
        row.fill(bias.data()[co]);
    }
    if g.is_pointwise() {
        gemm(g.cout, g.cin, plane_out, kernel.data(), false, input.data(), false, 1.0, &mut out);
    } else {
        let col = im2col(input.data(), &g);
        gemm(g.cout, g.patch_len(), plane_out, kernel.data(), false, &col, false, 1.0, &mut out);
    }
    Ok(Grid::from_parts(vec![g.cout, g.ho, g.wo], out))
}

/// Gradients of [`conv2d`]; each is `None` when it was not requested.
#[derive(Debug)]
pub struct ConvGrads {
    pub input: Option<Grid>,
    pub kernel: Option<Grid>,
    pub bias: Option<Grid>,
}

pub fn conv2d_backward(
    input: &Grid,
    kernel: &Grid,
    stride: usize,
    grad_out: &Grid,
    want_input: bool,
    want_params: bool,
) -> Result<ConvGrads> {
    let g = ConvGeom::new(input, kernel, stride)?;
    let plane_out = g.ho * g.wo;
    if grad_out.shape() != [g.cout, g.ho, g.wo] {
        return Err(Error::Shape(format!(
            "conv2d upstream gradient {:?} does not match output [{}, {}, {}]",
            grad_out.shape(),
            g.cout,
            g.ho,
            g.wo
        )));
    }
    let dy = grad_out.data();

    let mut grads = ConvGrads {
        input: None,
        kernel: None,
        bias: None,
    };

    if want_params {
        let mut dk = vec![0.0; g.cout * g.patch_len()];
        if g.is_pointwise() {
            gemm(g.cout, plane_out, g.cin, dy, false, input.data(), true, 0.0, &mut dk);
        } else {
            let col = im2col(input.data(), &g);
            gemm(g.cout, plane_out, g.patch_len(), dy, false, &col, true, 0.0, &mut dk);
        }
        let db: Vec<f64> = dy.chunks(plane_out).map(|r| r.iter().sum()).collect();
        grads.kernel = Some(Grid::from_parts(kernel.shape().to_vec(), dk));
        grads.bias = Some(Grid::from_parts(vec![g.cout], db));
    }

    if want_input {
        let mut dcol = vec![0.0; g.patch_len() * plane_out];
        gemm(g.patch_len(), g.cout, plane_out, kernel.data(), true, dy, false, 0.0, &mut dcol);
        let dx = if g.is_pointwise() { dcol } else { col2im(&dcol, &g) };
        grads.input = Some(Grid::from_parts(input.shape().to_vec(), dx));
    }

    Ok(grads)
}

pub fn relu(input: &Grid) -> Grid {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes the upstream gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(input: &Grid, grad_out: &Grid) -> Grid {
    Grid::from_parts(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    )
}

/// Softmax across the channel axis of a `C×H×W` grid, max-subtracted.
pub fn channel_softmax(input: &Grid) -> Result<Grid> {
    let (c, h, w) = input.chw()?;
    let plane = h * w;
    let x = input.data();
    let mut peak = x[..plane].to_vec();
    for ch in 1..c {
        for (m, &v) in peak.iter_mut().zip(&x[ch * plane..(ch + 1) * plane]) {
            *m = m.max(v);
        }
    }
    let mut out = vec![0.0; c * plane];
    let mut total = vec![0.0; plane];
    for ch in 0..c {
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        for ((d, &v), (&m, t)) in dst
            .iter_mut()
            .zip(&x[ch * plane..(ch + 1) * plane])
            .zip(peak.iter().zip(total.iter_mut()))
        {
            *d = (v - m).exp();
            *t += *d;
        }
    }
    for ch in 0..c {
        for (d, &t) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(&total) {
            *d /= t;
        }
    }
    Ok(Grid::from_parts(input.shape().to_vec(), out))
}

/// Vector-Jacobian product of [`channel_softmax`] given its output.
pub fn channel_softmax_backward(output: &Grid, grad_out: &Grid) -> Result<Grid> {
    let (c, h, w) = output.chw()?;
    let plane = h * w;
    let (y, dy) = (output.data(), grad_out.data());
    let mut dot = vec![0.0; plane];
    for ch in 0..c {
        let r = ch * plane..(ch + 1) * plane;
        for ((d, &yv), &gv) in dot.iter_mut().zip(&y[r.clone()]).zip(&dy[r]) {
            *d += yv * gv;
        }
    }
    let mut dx = vec![0.0; c * plane];
    for ch in 0..c {
        let r = ch * plane..(ch + 1) * plane;
        for (((d, &yv), &gv), &dt) in dx[r.clone()]
            .iter_mut()
            .zip(&y[r.clone()])
            .zip(&dy[r])
            .zip(&dot)
        {
            *d = yv * (gv - dt);
        }
    }
    Ok(Grid::from_parts(output.shape().to_vec(), dx))
}

/// Interpolation taps along one axis: `(lower, upper, weight of upper)`.
///
/// Source coordinate `s = (d + 0.5) / factor − 0.5`, clamped to `[0, n−1]`.
pub fn bilinear_taps(n: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n * factor)
        .map(|d| {
            let s = ((d as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn bilinear_upsample(input: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be ≥ 1".into()));
    }
    let (c, h, w) = input.chw()?;
    if factor == 1 {
        return Ok(input.clone());
    }
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let top = r0[x0] + wx * (r0[x1] - r0[x0]);
                let bottom = r1[x0] + wx * (r1[x1] - r1[x0]);
                dst[oy * ow + ox] = top + wy * (bottom - top);
            }
        }
    }
    Ok(Grid::from_parts(vec![c, oh, ow], out))
}

pub fn bilinear_upsample_backward(input_shape: &[usize], factor: usize, grad_out: &Grid) -> Result<Grid> {
    let &[c, h, w] = input_shape else {
        return Err(Error::Shape(format!("expected C×H×W, got {input_shape:?}")));
    };
    if factor == 1 {
        return Ok(grad_out.clone());
    }
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let dy = grad_out.data();
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = &dy[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let g = src[oy * ow + ox];
                let (gt, gb) = (g * (1.0 - wy), g * wy);
                dst[y0 * w + x0] += gt * (1.0 - wx);
                dst[y0 * w + x1] += gt * wx;
                dst[y1 * w + x0] += gb * (1.0 - wx);
                dst[y1 * w + x1] += gb * wx;
            }
        }
    }
    Ok(Grid::from_parts(input_shape.to_vec(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct four-loop convolution, independent of the im2col/GEMM path.
    fn conv_direct(input: &Grid, kernel: &Grid, bias: &Grid, stride: usize) -> Grid {
        let (cin, h, w) = input.chw().unwrap();
        let (cout, k) = (kernel.shape()[0], kernel.shape()[2]);
        let p = (k as isize - 1) / 2;
        let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
        Grid::from_fn(&[cout, ho, wo], |idx| {
            let (co, y, x) = (idx / (ho * wo), (idx / wo) % ho, idx % wo);
            let mut acc = bias.data()[co];
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (y * stride + ky) as isize - p;
                        let ix = (x * stride + kx) as isize - p;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        acc += kernel.data()[((co * cin + ci) * k + ky) * k + kx]
                            * input.at3(ci, iy as usize, ix as usize);
                    }
                }
            }
            acc
        })
    }

    fn random_grid(rng: &mut ChaCha8Rng, shape: &[usize]) -> Grid {
        Grid::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_grid(&mut rng, &[1, 5, 6]);
        let y = conv2d(&x, &Grid::filled(&[1, 1, 1, 1], 1.0), &Grid::zeros(&[1]), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Grid::filled(&[1, 3, 3], 1.0);
        let y = conv2d(&x, &Grid::filled(&[1, 1, 3, 3], 1.0), &Grid::zeros(&[1]), 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_grid(&mut rng, &[2, 4, 5]);
        let b = Grid::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d(&x, &Grid::zeros(&[3, 2, 3, 3]), &b, 1).unwrap();
        for co in 0..3 {
            for v in &y.data()[co * 20..(co + 1) * 20] {
                assert_eq!(*v, b.data()[co]);
            }
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let err = conv2d(
            &Grid::zeros(&[2, 4, 4]),
            &Grid::zeros(&[1, 3, 3, 3]),
            &Grid::zeros(&[1]),
            1,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("[2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(cin, cout, k, h, w, stride) in &[
            (3, 4, 3, 7, 9, 1),
            (3, 4, 3, 8, 8, 2),
            (2, 5, 1, 6, 5, 1),
            (2, 3, 5, 9, 7, 2),
            (1, 2, 3, 5, 5, 3),
            (4, 2, 1, 6, 6, 2),
        ] {
            let x = random_grid(&mut rng, &[cin, h, w]);
            let kern = random_grid(&mut rng, &[cout, cin, k, k]);
            let b = random_grid(&mut rng, &[cout]);
            let fast = conv2d(&x, &kern, &b, stride).unwrap();
            let slow = conv_direct(&x, &kern, &b, stride);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), dy> is linear in x and in the kernel, so the gradients must
        // satisfy <dx, x> + <dk, k> + <db, b> = <y, dy> exactly up to rounding.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(k, stride) in &[(3, 1), (3, 2), (1, 1), (5, 2)] {
            let x = random_grid(&mut rng, &[3, 7, 6]);
            let kern = random_grid(&mut rng, &[2, 3, k, k]);
            let b = random_grid(&mut rng, &[2]);
            let y = conv2d(&x, &kern, &b, stride).unwrap();
            let dy = random_grid(&mut rng, y.shape());
            let g = conv2d_backward(&x, &kern, stride, &dy, true, true).unwrap();
            let dot = |a: &Grid, b: &Grid| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
            let lhs = dot(&y, &dy);
            let rhs = dot(g.input.as_ref().unwrap(), &x) + dot(g.kernel.as_ref().unwrap(), &kern)
                + dot(g.bias.as_ref().unwrap(), &b);
            // conv is bilinear in (x, kernel): <dx,x> and <dk,k> each equal <y−b, dy>.
            let bias_part = dot(g.bias.as_ref().unwrap(), &b);
            assert!((rhs - (2.0 * (lhs - bias_part) + bias_part)).abs() < 1e-9);
        }
    }

    #[test]
    fn relu_cases() {
        let x = Grid::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Grid::filled(&[3], 5.0));
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn softmax_closed_form() {
        let x = Grid::new(vec![2, 1, 1], vec![0.0, 3f64.ln()]).unwrap();
        let y = channel_softmax(&x).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let y = channel_softmax(&Grid::filled(&[4, 2, 3], 7.5)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_grid(&mut rng, &[3, 4, 4]);
        let shifted = x.map(|v| v + 123.0);
        let (a, b) = (channel_softmax(&x).unwrap(), channel_softmax(&shifted).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_grid(&mut rng, &[2, 3, 4]);
        assert_eq!(bilinear_upsample(&x, 1).unwrap(), x);
        let c = bilinear_upsample(&Grid::filled(&[1, 3, 5], 0.37), 3).unwrap();
        assert_eq!(c.shape(), &[1, 9, 15]);
        assert!(c.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn upsample_two_by_two_matches_formula() {
        // Independent evaluation: for each output pixel, compute the clamped
        // source coordinate and interpolate the four neighbours.
        let src = [[0.0, 1.0], [2.0, 3.0]];
        let x = Grid::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_upsample(&x, 2).unwrap();
        let coord = |d: usize| ((d as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
        for oy in 0..4 {
            for ox in 0..4 {
                let (sy, sx) = (coord(oy), coord(ox));
                let expect = (1.0 - sy) * ((1.0 - sx) * src[0][0] + sx * src[0][1])
                    + sy * ((1.0 - sx) * src[1][0] + sx * src[1][1]);
                assert!((y.at3(0, oy, ox) - expect).abs() < 1e-15);
            }
        }
        // Frozen: first row is 0, 0.25, 0.75, 1.
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }
}
