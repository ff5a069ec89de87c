//! The edge-detection network and the small segmentation network.
//!
//! Edge net: `C → 16 → 32 → 2`, 3×3 kernels, stride 1, ReLU after the first
//! two layers and a channel softmax after the last.
//!
//! Segmentation net:
//!
//! ```text
//! conv 3→16 3×3 s1 → ReLU → conv 16→32 3×3 s2 → ReLU → conv 32→32 3×3 s1 → ReLU
//!   ├─ conv 32→C 1×1 → bilinear ×2 → softmax          (segmentation)
//!   └─ conv 32→2 1×1 → bilinear ×2 → softmax          (optional edge head)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::tape::{NodeId, Tape};

/// Output channels of the three edge-net layers.
pub const EDGE_NET_CHANNELS: [usize; 3] = [16, 32, 2];
pub const EDGE_NET_KERNEL: usize = 3;
pub const EDGE_NET_DEPTH: usize = 3;

/// Spatial downsampling of the segmentation trunk, undone by the upsample.
pub const SEG_NET_DOWNSAMPLE: usize = 2;

/// `(cout, cin, k, stride)` of the segmentation trunk; `None` cin means the
/// RGB input, `None` cout means the class count.
const SEG_TRUNK: [(Option<usize>, Option<usize>, usize, usize); 4] = [
    (Some(16), None, 3, 1),
    (Some(32), Some(16), 3, 2),
    (Some(32), Some(32), 3, 1),
    (None, Some(32), 1, 1),
];

const SEG_HEAD_FEATURES: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Grid,
    pub bias: Grid,
    pub stride: usize,
}

/// Tape handles for one registered layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerNodes {
    pub kernel: NodeId,
    pub bias: NodeId,
}

impl ConvLayer {
    pub fn zeros(cout: usize, cin: usize, k: usize, stride: usize) -> Self {
        Self {
            kernel: Grid::zeros(&[cout, cin, k, k]),
            bias: Grid::zeros(&[cout]),
            stride,
        }
    }

    /// Weights `~ N(0, 2 / fan_in)`, zero bias.
    fn he(cout: usize, cin: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        Self {
            kernel: Grid::from_fn(&[cout, cin, k, k], |_| normal.sample(rng)),
            bias: Grid::zeros(&[cout]),
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LayerNodes {
        let leaf = |t: &mut Tape, g: &Grid| {
            if trainable {
                t.param(g.clone())
            } else {
                t.constant(g.clone())
            }
        };
        LayerNodes {
            kernel: leaf(tape, &self.kernel),
            bias: leaf(tape, &self.bias),
        }
    }

    fn apply(&self, tape: &mut Tape, input: NodeId, nodes: LayerNodes) -> Result<NodeId> {
        tape.conv2d(input, nodes.kernel, nodes.bias, self.stride)
    }
}

/// Network kind plus the choices that fix its channel plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkSpec {
    Edge { classes: usize },
    Seg { classes: usize, edge_head: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    Edge(EdgeNetParams),
    Seg(SegNetParams),
}

/// He-initialised parameters, deterministic per seed.
pub fn init_params(spec: NetworkSpec, seed: u64) -> Result<Params> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec {
        NetworkSpec::Edge { classes } => {
            check_classes(classes)?;
            let mut cin = classes;
            let layers = EDGE_NET_CHANNELS
                .iter()
                .map(|&cout| {
                    let l = ConvLayer::he(cout, cin, EDGE_NET_KERNEL, 1, &mut rng);
                    cin = cout;
                    l
                })
                .collect();
            Ok(Params::Edge(EdgeNetParams { classes, layers }))
        }
        NetworkSpec::Seg { classes, edge_head } => {
            check_classes(classes)?;
            let layers = SEG_TRUNK
                .iter()
                .map(|&(cout, cin, k, s)| ConvLayer::he(cout.unwrap_or(classes), cin.unwrap_or(3), k, s, &mut rng))
                .collect();
            let edge_head = edge_head.then(|| ConvLayer::he(2, SEG_HEAD_FEATURES, 1, 1, &mut rng));
            Ok(Params::Seg(SegNetParams {
                classes,
                layers,
                edge_head,
            }))
        }
    }
}

fn check_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    Ok(())
}

impl Params {
    pub fn spec(&self) -> NetworkSpec {
        match self {
            Params::Edge(p) => NetworkSpec::Edge { classes: p.classes },
            Params::Seg(p) => NetworkSpec::Seg {
                classes: p.classes,
                edge_head: p.edge_head.is_some(),
            },
        }
    }

    pub fn layers(&self) -> Vec<&ConvLayer> {
        match self {
            Params::Edge(p) => p.layers.iter().collect(),
            Params::Seg(p) => p.layers.iter().chain(p.edge_head.as_ref()).collect(),
        }
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        match self {
            Params::Edge(p) => p.layers.iter_mut().collect(),
            Params::Seg(p) => p.layers.iter_mut().chain(p.edge_head.as_mut()).collect(),
        }
    }

    pub fn into_edge(self) -> Result<EdgeNetParams> {
        match self {
            Params::Edge(p) => Ok(p),
            Params::Seg(_) => Err(Error::InvalidArgument("checkpoint holds a segmentation net, expected an edge net".into())),
        }
    }

    pub fn into_seg(self) -> Result<SegNetParams> {
        match self {
            Params::Seg(p) => Ok(p),
            Params::Edge(_) => Err(Error::InvalidArgument("checkpoint holds an edge net, expected a segmentation net".into())),
        }
    }
}

/// Parameters of the edge-detection network.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeNetParams {
    classes: usize,
    layers: Vec<ConvLayer>,
}

/// Per-layer activations of the edge net. `pre[l]` is the convolution output
/// of layer `l`; `post[l]` is its ReLU (softmax for the last layer).
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    pub pre: Vec<Grid>,
    pub post: Vec<Grid>,
}

/// Tape handles of the embeddings, possibly truncated to a prefix of layers.
#[derive(Clone, Debug)]
pub struct EmbeddingNodes {
    pub pre: Vec<NodeId>,
    pub post: Vec<NodeId>,
}

impl EdgeNetParams {
    /// All-zero weights; the net then predicts `(0.5, 0.5)` everywhere.
    pub fn zeros(classes: usize) -> Self {
        let mut cin = classes;
        let layers = EDGE_NET_CHANNELS
            .iter()
            .map(|&cout| {
                let l = ConvLayer::zeros(cout, cin, EDGE_NET_KERNEL, 1);
                cin = cout;
                l
            })
            .collect();
        Self { classes, layers }
    }

    pub fn init(classes: usize, seed: u64) -> Result<Self> {
        init_params(NetworkSpec::Edge { classes }, seed)?.into_edge()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<LayerNodes> {
        self.layers.iter().map(|l| l.register(tape, trainable)).collect()
    }

    /// Runs the first `depth` layers on a `C×H×W` mask already on the tape.
    pub fn forward_on(&self, tape: &mut Tape, mask: NodeId, nodes: &[LayerNodes], depth: usize) -> Result<EmbeddingNodes> {
        let channels = tape.value(mask).chw()?.0;
        if channels != self.classes {
            return Err(Error::Shape(format!(
                "edge net expects {} mask channels, got {channels}",
                self.classes
            )));
        }
        let depth = depth.min(EDGE_NET_DEPTH);
        let mut out = EmbeddingNodes {
            pre: Vec::with_capacity(depth),
            post: Vec::with_capacity(depth),
        };
        let mut x = mask;
        for (l, layer) in self.layers.iter().enumerate().take(depth) {
            let pre = layer.apply(tape, x, nodes[l])?;
            let post = if l + 1 == EDGE_NET_DEPTH {
                tape.channel_softmax(pre)?
            } else {
                tape.relu(pre)
            };
            out.pre.push(pre);
            out.post.push(post);
            x = post;
        }
        Ok(out)
    }

    /// Edge probabilities `Ê` (`2×H×W`) and every embedding of the mask.
    pub fn forward(&self, mask: &Grid) -> Result<(Grid, EmbeddingSet)> {
        let mut tape = Tape::new();
        let nodes = self.register(&mut tape, false);
        let input = tape.constant(mask.clone());
        let emb = self.forward_on(&mut tape, input, &nodes, EDGE_NET_DEPTH)?;
        let set = EmbeddingSet {
            pre: emb.pre.iter().map(|&n| tape.value(n).clone()).collect(),
            post: emb.post.iter().map(|&n| tape.value(n).clone()).collect(),
        };
        Ok((set.post[EDGE_NET_DEPTH - 1].clone(), set))
    }
}

/// Parameters of the segmentation network.
#[derive(Clone, Debug, PartialEq)]
pub struct SegNetParams {
    classes: usize,
    layers: Vec<ConvLayer>,
    edge_head: Option<ConvLayer>,
}

#[derive(Clone, Debug)]
pub struct SegNodes {
    pub trunk: Vec<LayerNodes>,
    pub edge_head: Option<LayerNodes>,
}

#[derive(Clone, Copy, Debug)]
pub struct SegOutputNodes {
    pub probs: NodeId,
    pub edge_probs: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct SegOutput {
    /// `C×H×W` class distribution.
    pub probs: Grid,
    /// `2×H×W` edge distribution from the multi-task head, when present.
    pub edge_probs: Option<Grid>,
}

impl SegNetParams {
    pub fn zeros(classes: usize, edge_head: bool) -> Self {
        Self {
            classes,
            layers: SEG_TRUNK
                .iter()
                .map(|&(cout, cin, k, s)| ConvLayer::zeros(cout.unwrap_or(classes), cin.unwrap_or(3), k, s))
                .collect(),
            edge_head: edge_head.then(|| ConvLayer::zeros(2, SEG_HEAD_FEATURES, 1, 1)),
        }
    }

    pub fn init(classes: usize, edge_head: bool, seed: u64) -> Result<Self> {
        init_params(NetworkSpec::Seg { classes, edge_head }, seed)?.into_seg()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn has_edge_head(&self) -> bool {
        self.edge_head.is_some()
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn edge_head(&self) -> Option<&ConvLayer> {
        self.edge_head.as_ref()
    }

    /// Same trunk and classifier without the multi-task head.
    pub fn without_edge_head(&self) -> Self {
        Self {
            edge_head: None,
            ..self.clone()
        }
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> SegNodes {
        SegNodes {
            trunk: self.layers.iter().map(|l| l.register(tape, trainable)).collect(),
            edge_head: self.edge_head.as_ref().map(|l| l.register(tape, trainable)),
        }
    }

    pub fn check_input(&self, image: &Grid) -> Result<()> {
        let (c, h, w) = image.chw()?;
        if c != 3 {
            return Err(Error::Shape(format!("segmentation net expects an RGB image, got {c} channels")));
        }
        if h % SEG_NET_DOWNSAMPLE != 0 || w % SEG_NET_DOWNSAMPLE != 0 {
            return Err(Error::Shape(format!(
                "image is {h}×{w}; height and width must be multiples of {SEG_NET_DOWNSAMPLE} \
                 (resize or crop to {}×{})",
                h - h % SEG_NET_DOWNSAMPLE,
                w - w % SEG_NET_DOWNSAMPLE
            )));
        }
        Ok(())
    }

    pub fn forward_on(&self, tape: &mut Tape, image: NodeId, nodes: &SegNodes) -> Result<SegOutputNodes> {
        self.check_input(tape.value(image))?;
        let mut x = image;
        for (layer, &n) in self.layers[..3].iter().zip(&nodes.trunk[..3]) {
            let pre = layer.apply(tape, x, n)?;
            x = tape.relu(pre);
        }
        let features = x;
        let logits = self.layers[3].apply(tape, features, nodes.trunk[3])?;
        let up = tape.bilinear_upsample(logits, SEG_NET_DOWNSAMPLE)?;
        let probs = tape.channel_softmax(up)?;

        let edge_probs = match (&self.edge_head, nodes.edge_head) {
            (Some(head), Some(n)) => {
                let logits = head.apply(tape, features, n)?;
                let up = tape.bilinear_upsample(logits, SEG_NET_DOWNSAMPLE)?;
                Some(tape.channel_softmax(up)?)
            }
            _ => None,
        };
        Ok(SegOutputNodes { probs, edge_probs })
    }

    pub fn forward(&self, image: &Grid) -> Result<SegOutput> {
        let mut tape = Tape::new();
        let nodes = self.register(&mut tape, false);
        let input = tape.constant(image.clone());
        let out = self.forward_on(&mut tape, input, &nodes)?;
        Ok(SegOutput {
            probs: tape.value(out.probs).clone(),
            edge_probs: out.edge_probs.map(|n| tape.value(n).clone()),
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 7] = b"SEMEDA1";
const KIND_EDGE: u8 = 0;
const KIND_SEG: u8 = 1;
const ROLE_TRUNK: u8 = 0;
const ROLE_EDGE_HEAD: u8 = 1;

/// Serialises parameters.
///
/// Layout, all integers little-endian `u32`:
///
/// ```text
/// "SEMEDA1"  kind:u8 (0 edge, 1 seg)  classes  layer_count
/// per layer: role:u8 (0 trunk, 1 edge head)  cout  cin  k  stride
/// per layer: kernel as f64 LE (cout·cin·k·k values), then bias as f64 LE
/// ```
pub fn encode_checkpoint(params: &Params) -> Vec<u8> {
    let (kind, classes) = match params.spec() {
        NetworkSpec::Edge { classes } => (KIND_EDGE, classes),
        NetworkSpec::Seg { classes, .. } => (KIND_SEG, classes),
    };
    let layers = params.layers();
    let trunk_len = match params {
        Params::Edge(p) => p.layers.len(),
        Params::Seg(p) => p.layers.len(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(kind);
    out.extend_from_slice(&(classes as u32).to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for (i, l) in layers.iter().enumerate() {
        out.push(if i < trunk_len { ROLE_TRUNK } else { ROLE_EDGE_HEAD });
        for v in [l.out_channels(), l.in_channels(), l.kernel_size(), l.stride] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for l in &layers {
        for v in l.kernel.data().iter().chain(l.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("checkpoint", self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let pos = self.pos;
        let b = self.take(8, what)?;
        let v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::format("checkpoint", pos, format!("non-finite {what}")));
        }
        Ok(v)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Params> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", 0, "missing SEMEDA1 magic"));
    }
    let kind_pos = r.pos;
    let kind = r.u8("network kind")?;
    let classes = r.u32("class count")?;
    let count = r.u32("layer count")?;
    let mut plan = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let role = r.u8("layer role")?;
        let dims = [r.u32("cout")?, r.u32("cin")?, r.u32("kernel size")?, r.u32("stride")?];
        plan.push((role, dims));
    }
    let has_head = plan.iter().any(|(role, _)| *role == ROLE_EDGE_HEAD);
    let mut params = match kind {
        KIND_EDGE => Params::Edge(EdgeNetParams::zeros(classes)),
        KIND_SEG => Params::Seg(SegNetParams::zeros(classes, has_head)),
        other => return Err(Error::format("checkpoint", kind_pos, format!("unknown network kind {other}"))),
    };
    let expected: Vec<[usize; 4]> = params
        .layers()
        .iter()
        .map(|l| [l.out_channels(), l.in_channels(), l.kernel_size(), l.stride])
        .collect();
    let found: Vec<[usize; 4]> = plan.iter().map(|(_, d)| *d).collect();
    if expected != found {
        return Err(Error::format(
            "checkpoint",
            kind_pos,
            format!("channel plan {found:?} does not match the network ({expected:?})"),
        ));
    }
    for layer in params.layers_mut() {
        for v in layer.kernel.data_mut() {
            *v = r.f64("kernel weight")?;
        }
        for v in layer.bias.data_mut() {
            *v = r.f64("bias")?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", r.pos, "trailing bytes after payload"));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &std::path::Path, params: &Params) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Params> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_mask(classes: usize, h: usize, w: usize, seed: u64) -> Grid {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Grid::from_fn(&[classes, h, w], |_| rng.random_range(-2.0..2.0));
        crate::ops::channel_softmax(&raw).unwrap()
    }

    #[test]
    fn zero_edge_net_predicts_half() {
        let net = EdgeNetParams::zeros(3);
        let (e, emb) = net.forward(&random_mask(3, 5, 7, 1)).unwrap();
        assert_eq!(e.shape(), &[2, 5, 7]);
        assert!(e.data().iter().all(|&v| v == 0.5));
        assert_eq!(emb.pre.len(), 3);
    }

    #[test]
    fn embeddings_are_relu_of_pre_activations() {
        let net = EdgeNetParams::init(4, 2).unwrap();
        let (e, emb) = net.forward(&random_mask(4, 6, 6, 3)).unwrap();
        for l in 0..2 {
            assert_eq!(emb.post[l], crate::ops::relu(&emb.pre[l]));
            assert_eq!(emb.pre[l].shape()[1..], [6, 6]);
        }
        assert_eq!(emb.post[2], e);
        for px in 0..36 {
            assert!((e.data()[px] + e.data()[36 + px] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_net_rejects_channel_mismatch() {
        let net = EdgeNetParams::zeros(3);
        assert!(matches!(net.forward(&Grid::zeros(&[2, 4, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn seg_net_shapes_and_zero_init() {
        let net = SegNetParams::zeros(5, false);
        let out = net.forward(&Grid::filled(&[3, 8, 6], 0.3)).unwrap();
        assert_eq!(out.probs.shape(), &[5, 8, 6]);
        assert!(out.probs.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(out.edge_probs.is_none());
    }

    #[test]
    fn seg_net_rejects_odd_sizes_with_hint() {
        let net = SegNetParams::zeros(2, false);
        let err = net.forward(&Grid::zeros(&[3, 7, 8])).unwrap_err().to_string();
        assert!(err.contains("6×8"), "{err}");
    }

    #[test]
    fn edge_head_does_not_change_segmentation() {
        let with = SegNetParams::init(3, true, 5).unwrap();
        let without = with.without_edge_head();
        let img = Grid::from_fn(&[3, 8, 8], |i| (i as f64 * 0.37).sin().abs());
        let a = with.forward(&img).unwrap();
        let b = without.forward(&img).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.edge_probs.unwrap().shape(), &[2, 8, 8]);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = SegNetParams::init(4, true, 77).unwrap();
        assert_eq!(a, SegNetParams::init(4, true, 77).unwrap());
        assert_ne!(a, SegNetParams::init(4, true, 78).unwrap());
        let p = Params::Seg(a);
        assert!(p.layers().iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn he_variance_within_three_x() {
        // Layer 2 of the edge net has fan-in 16·3·3 = 144 and 32·144 = 4608 draws.
        let net = EdgeNetParams::init(5, 123).unwrap();
        let k = &net.layers()[1].kernel;
        assert_eq!(k.shape(), &[32, 16, 3, 3]);
        let n = k.len() as f64;
        let mean = k.sum() / n;
        let var = k.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 144.0;
        assert!(var > target / 3.0 && var < target * 3.0, "{var} vs {target}");
    }

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        for params in [
            init_params(NetworkSpec::Edge { classes: 5 }, 1).unwrap(),
            init_params(NetworkSpec::Seg { classes: 4, edge_head: false }, 2).unwrap(),
            init_params(NetworkSpec::Seg { classes: 3, edge_head: true }, 3).unwrap(),
        ] {
            let bytes = encode_checkpoint(&params);
            assert_eq!(&bytes[..7], b"SEMEDA1");
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, params);
            assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn checkpoint_rejects_damage() {
        let bytes = encode_checkpoint(&init_params(NetworkSpec::Edge { classes: 2 }, 1).unwrap());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut kind = bytes;
        kind[7] = 9;
        assert!(decode_checkpoint(&kind).is_err());
    }
}
