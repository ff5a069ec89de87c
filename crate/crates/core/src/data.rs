//! Synthetic shapes dataset, one-hot encoding, and binary PPM/PGM files.
//!
//! Directory layout: `img_<id>.ppm` (P6, maxval 255), `mask_<id>.pgm` (P5,
//! maxval 255, label ids verbatim, void = 255), and `train.txt` / `val.txt`
//! manifests with one id per LF-terminated line.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mask::LabelMask;

/// Per-pixel texture noise of synthetic images, in `[0, 1]` units.
pub const TEXTURE_SIGMA: f64 = 0.05;

const SHAPE_KINDS: usize = 3;

/// One image with its label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `3×H×W`, values in `[0, 1]`.
    pub image: Grid,
    pub mask: LabelMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Grid, mask: LabelMask) -> Result<Self> {
        let (c, h, w) = image.chw()?;
        if c != 3 || (h, w) != (mask.height(), mask.width()) {
            return Err(Error::Shape(format!(
                "image {:?} does not pair with a {}×{} mask",
                image.shape(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }
}

/// `C×H×W` indicator grid. Void pixels are zero in every channel.
pub fn one_hot(mask: &LabelMask, classes: usize) -> Result<Grid> {
    mask.check_classes(classes)?;
    let plane = mask.height() * mask.width();
    let mut data = vec![0.0; classes * plane];
    for (px, &l) in mask.labels().iter().enumerate() {
        if !mask.is_void_at(px) {
            data[l as usize * plane + px] = 1.0;
        }
    }
    Ok(Grid::from_parts(vec![classes, mask.height(), mask.width()], data))
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Base colour of a foreground class. Classes beyond the shape kinds reuse a
/// kind but sit in their own hue band.
fn class_color(class: usize, classes: usize) -> [f64; 3] {
    hsv_to_rgb((class - 1) as f64 / (classes - 1) as f64, 0.75, 0.85)
}

enum Shape {
    Rect { top: f64, left: f64, h: f64, w: f64 },
    Disk { cy: f64, cx: f64, r: f64 },
    Triangle([(f64, f64); 3]),
}

impl Shape {
    fn random(kind: usize, size: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = size as f64;
        match kind {
            0 => {
                let h = rng.random_range(3.0..s / 2.0).floor();
                let w = rng.random_range(3.0..s / 2.0).floor();
                Shape::Rect {
                    top: rng.random_range(0.0..s - h).floor(),
                    left: rng.random_range(0.0..s - w).floor(),
                    h,
                    w,
                }
            }
            1 => {
                let r = rng.random_range(s / 12.0..s / 5.0);
                Shape::Disk {
                    cy: rng.random_range(r..s - r),
                    cx: rng.random_range(r..s - r),
                    r,
                }
            }
            _ => loop {
                let side = rng.random_range(s / 6.0..s / 2.0);
                let (oy, ox) = (rng.random_range(0.0..s - side), rng.random_range(0.0..s - side));
                let mut pt = || (oy + rng.random_range(0.0..side), ox + rng.random_range(0.0..side));
                let v = [pt(), pt(), pt()];
                let area = ((v[1].0 - v[0].0) * (v[2].1 - v[0].1) - (v[2].0 - v[0].0) * (v[1].1 - v[0].1)).abs() / 2.0;
                if area >= side * side / 8.0 {
                    break Shape::Triangle(v);
                }
            },
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { top, left, h, w } => y >= top && y < top + h && x >= left && x < left + w,
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Triangle(v) => {
                let side = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (x - a.1) - (b.1 - a.1) * (y - a.0);
                let (d0, d1, d2) = (side(v[0], v[1]), side(v[1], v[2]), side(v[2], v[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }
}

/// Generates `count` samples of `size×size` images with 1–4 shapes each.
///
/// Class 0 is background; a shape of class `c` is drawn with kind
/// `(c − 1) mod 3` (rectangle, disk, triangle). Later shapes occlude earlier
/// ones. Every sample is seeded from `(seed, index)`, so a prefix of a larger
/// dataset equals the smaller dataset.
pub fn gen_synthetic(count: usize, size: usize, classes: usize, seed: u64) -> Result<Vec<Sample>> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need background plus at least one shape class, got {classes} classes"
        )));
    }
    if classes > 255 {
        return Err(Error::InvalidArgument("at most 255 classes fit an 8-bit mask".into()));
    }
    if size < 32 {
        return Err(Error::InvalidArgument(format!("image size must be ≥ 32, got {size}")));
    }
    let texture = Normal::new(0.0, TEXTURE_SIGMA).expect("positive sigma");
    (0..count)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[index as u64]));
            let mut mask = LabelMask::filled(size, size, 0);
            let base = rng.random_range(0.15..0.45);
            let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
            let mut colors: Vec<[f64; 3]> = vec![std::array::from_fn(|ch| base + tint[ch])];
            let mut layer = vec![0usize; size * size];

            let n_shapes = rng.random_range(1..=4);
            for _ in 0..n_shapes {
                let class = rng.random_range(1..classes);
                let shape = Shape::random((class - 1) % SHAPE_KINDS, size, &mut rng);
                let c = class_color(class, classes);
                colors.push(std::array::from_fn(|ch| (c[ch] + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0)));
                let slot = colors.len() - 1;
                for y in 0..size {
                    for x in 0..size {
                        if shape.contains(y as f64 + 0.5, x as f64 + 0.5) {
                            mask.set(y, x, class as u8);
                            layer[y * size + x] = slot;
                        }
                    }
                }
            }

            let plane = size * size;
            let mut image = vec![0.0; 3 * plane];
            for px in 0..plane {
                for ch in 0..3 {
                    let v = colors[layer[px]][ch] + texture.sample(&mut rng);
                    image[ch * plane + px] = v.clamp(0.0, 1.0);
                }
            }
            Sample::new(
                format!("{index:05}"),
                Grid::from_parts(vec![3, size, size], image),
                mask,
            )
        })
        .collect()
}

pub fn encode_ppm(image: &Grid) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {c}")));
    }
    if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("image value {v} outside [0, 1]")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(3 * plane);
    for px in 0..plane {
        for ch in 0..3 {
            out.push((image.data()[ch * plane + px] * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn encode_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.labels());
    out
}

/// Parses a binary netpbm header, returning `(width, height, payload offset)`.
fn parse_header(bytes: &[u8], magic: &[u8; 2], kind: &'static str) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            kind,
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(kind, pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(kind, start, "header field out of range"))?;
        if i == 2 && *field != 255 {
            return Err(Error::format(kind, start, format!("maxval must be 255, got {field}")));
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((fields[0], fields[1], pos + 1)),
        _ => Err(Error::format(kind, pos, "expected one whitespace byte before the payload")),
    }
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, kind: &'static str) -> Result<&'a [u8]> {
    let available = bytes.len() - offset;
    if available < len {
        return Err(Error::format(
            kind,
            bytes.len(),
            format!("truncated payload: {available} of {len} bytes"),
        ));
    }
    if available > len {
        return Err(Error::format(kind, offset + len, "trailing bytes after payload"));
    }
    Ok(&bytes[offset..])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Grid> {
    let (w, h, offset) = parse_header(bytes, b"P6", "PPM")?;
    let raw = payload(bytes, offset, 3 * w * h, "PPM")?;
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (px, rgb) in raw.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + px] = f64::from(rgb[ch]) / 255.0;
        }
    }
    Ok(Grid::from_parts(vec![3, h, w], data))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMask> {
    let (w, h, offset) = parse_header(bytes, b"P5", "PGM")?;
    let raw = payload(bytes, offset, w * h, "PGM")?;
    LabelMask::new(h, w, raw.to_vec())
}

fn image_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("img_{id}.ppm"))
}

fn mask_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("mask_{id}.pgm"))
}

/// Writes `img_<id>.ppm` and `mask_<id>.pgm` into `dir`.
pub fn encode_pnm(sample: &Sample, dir: &Path) -> Result<()> {
    let ip = image_path(dir, &sample.id);
    std::fs::write(&ip, encode_ppm(&sample.image)?).map_err(|e| Error::io(ip, e))?;
    let mp = mask_path(dir, &sample.id);
    std::fs::write(&mp, encode_pgm(&sample.mask)).map_err(|e| Error::io(mp, e))
}

fn read(path: &Path, id: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Data(format!("sample `{id}`: missing {}", path.display())),
        _ => Error::io(path, e),
    })
}

pub fn decode_pnm(dir: &Path, id: &str) -> Result<Sample> {
    let with_id = |e: Error| match e {
        Error::Format { kind, offset, message } => Error::Data(format!("sample `{id}`: malformed {kind} at byte {offset}: {message}")),
        other => other,
    };
    let image = decode_ppm(&read(&image_path(dir, id), id)?).map_err(with_id)?;
    let mask = decode_pgm(&read(&mask_path(dir, id), id)?).map_err(with_id)?;
    Sample::new(id, image, mask).map_err(|e| Error::Data(format!("sample `{id}`: {e}")))
}

/// Reads a manifest, rejecting duplicate ids.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    for line in text.lines() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::Data(format!("{}: duplicate id `{id}`", path.display())));
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

pub fn write_manifest(path: &Path, ids: impl IntoIterator<Item = impl AsRef<str>>) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id.as_ref());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the samples named by `dir/<manifest>` in manifest order.
pub fn load_dataset(dir: &Path, manifest: &str) -> Result<Vec<Sample>> {
    read_manifest(&dir.join(manifest))?
        .iter()
        .map(|id| decode_pnm(dir, id))
        .collect()
}

/// Writes both splits and their manifests.
pub fn write_dataset(dir: &Path, train: &[Sample], val: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in train.iter().chain(val) {
        encode_pnm(s, dir)?;
    }
    write_manifest(&dir.join("train.txt"), train.iter().map(|s| &s.id))?;
    write_manifest(&dir.join("val.txt"), val.iter().map(|s| &s.id))
}
