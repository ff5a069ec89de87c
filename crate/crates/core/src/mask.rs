//! Label masks, ground-truth semantic edges, mask perturbation and trimap bands.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ops;

/// Default id of unlabeled pixels.
pub const VOID: u8 = 255;

/// Per-pixel class ids, row-major, with one id reserved for void.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    void: u8,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        Self::with_void(height, width, labels, VOID)
    }

    pub fn with_void(height: usize, width: usize, labels: Vec<u8>, void: u8) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("mask dimensions must be positive".into()));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}×{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            void,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
            void: VOID,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn void_id(&self) -> u8 {
        self.void
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn is_void_at(&self, index: usize) -> bool {
        self.labels[index] == self.void
    }

    /// Class id per pixel, `None` on void.
    pub fn class_targets(&self) -> Vec<Option<usize>> {
        self.labels
            .iter()
            .map(|&l| (l != self.void).then_some(l as usize))
            .collect()
    }

    /// Rejects any non-void label `>= classes`, naming the first offender.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        for (i, &l) in self.labels.iter().enumerate() {
            if l != self.void && l as usize >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {l} at pixel (row {}, col {}) is outside 0..{classes}",
                    i / self.width,
                    i % self.width
                )));
            }
        }
        Ok(())
    }

    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for (dst, src) in out
            .labels
            .chunks_mut(self.width)
            .zip(self.labels.chunks(self.width))
        {
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
        out
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {height}×{width} at ({top}, {left}) exceeds {}×{} mask",
                self.height, self.width
            )));
        }
        let labels = (top..top + height)
            .flat_map(|y| self.labels[y * self.width + left..y * self.width + left + width].iter().copied())
            .collect();
        Ok(Self {
            height,
            width,
            labels,
            void: self.void,
        })
    }
}

/// Binary map, one flag per pixel, shared by edge maps and trimap bands.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    flags: Vec<bool>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}×{width} map needs {} flags, got {}",
                height * width,
                flags.len()
            )));
        }
        Ok(Self {
            height,
            width,
            flags,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMap) -> bool {
        self.flags.iter().zip(&other.flags).all(|(&a, &b)| !a || b)
    }

    pub fn mirrored(&self) -> Self {
        let flags = self
            .flags
            .chunks(self.width)
            .flat_map(|row| row.iter().rev().copied())
            .collect();
        Self { flags, ..*self }
    }

    /// Two-class targets: 1 where the flag is set, 0 elsewhere.
    pub fn class_targets(&self) -> Vec<Option<usize>> {
        self.flags.iter().map(|&f| Some(usize::from(f))).collect()
    }
}

/// Ground-truth semantic edges: set where a pixel is an edge.
pub type EdgeMap = BinaryMap;

/// Trimap band: set where a pixel lies in the boundary region.
pub type BandMap = BinaryMap;

/// A pixel is an edge iff some in-bounds, non-void 8-neighbour carries a
/// different label. Void pixels are never edges.
pub fn extract_edge_map(mask: &LabelMask) -> EdgeMap {
    let (h, w) = (mask.height, mask.width);
    let mut flags = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let here = mask.get(y, x);
            if here == mask.void {
                continue;
            }
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            'scan: for ny in y0..=y1 {
                for nx in x0..=x1 {
                    let other = mask.get(ny, nx);
                    if other != mask.void && other != here {
                        flags[y * w + x] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    BinaryMap {
        height: h,
        width: w,
        flags,
    }
}

/// `softmax(one_hot + N(0, σ²))` across channels, with noise drawn from a
/// ChaCha stream seeded by `seed` in row-major order.
pub fn perturb_mask(one_hot: &Grid, sigma: f64, seed: u64) -> Result<Grid> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise σ must be a finite non-negative number, got {sigma}"
        )));
    }
    one_hot.chw()?;
    let mut noisy = one_hot.clone();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in noisy.data_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    ops::channel_softmax(&noisy)
}

/// Boundary band of the given width: pixels whose Chebyshev distance to the
/// nearest edge pixel is at most `width − 1`. An empty edge set gives an
/// all-interior band.
pub fn build_trimap_band(edges: &EdgeMap, width: usize) -> Result<BandMap> {
    if width == 0 {
        return Err(Error::InvalidArgument("trimap band width must be ≥ 1".into()));
    }
    let radius = width - 1;
    let (h, w) = (edges.height, edges.width);
    // Square dilation separates into a row pass and a column pass.
    let dilate = |line: &[bool]| -> Vec<bool> {
        let n = line.len();
        let mut prefix = vec![0usize; n + 1];
        for (i, &f) in line.iter().enumerate() {
            prefix[i + 1] = prefix[i] + usize::from(f);
        }
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius + 1).min(n);
                prefix[hi] > prefix[lo]
            })
            .collect()
    };
    let mut rows = Vec::with_capacity(h * w);
    for row in edges.flags.chunks(w) {
        rows.extend(dilate(row));
    }
    let mut flags = vec![false; h * w];
    let mut column = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = rows[y * w + x];
        }
        for (y, f) in dilate(&column).into_iter().enumerate() {
            flags[y * w + x] = f;
        }
    }
    Ok(BinaryMap {
        height: h,
        width: w,
        flags,
    })
}
