//! Semantic segmentation networks.
//!
//! The backbone is a reduced residual network: an initial 3x3 conv and two
//! pre-activation residual blocks. In latent mode it consumes
//! quantization-reconstructed latents directly (16 channels, already
//! spatially downsampled by the codec); in image mode a patchify stem first
//! downsamples the RGB input by the same factor so both modes see the same
//! grid. A dual-graph head refines the feature map with two branches: a
//! coordinate branch that propagates between pixels of the downsampled map
//! using an affinity built from learned projections, and a feature branch
//! that projects pixels onto a small set of latent nodes via a softmax
//! assignment, applies V' = ReLU((I - A) V W) with a learned node adjacency
//! A, and reprojects. Both branch outputs are zero-initialized, so the head
//! starts as an exact identity. Class logits are bilinearly upsampled back
//! to the original image resolution.

use std::path::Path;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::{grads_for, BoundConv, Conv2d, MatParam};
use crate::optim::Optimizer;
use crate::tensor::init::seeded_rng;
use crate::tensor::{Shape, Tape, Tensor, Var};

/// Class-index raster at image resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    pub height: usize,
    pub width: usize,
    pub classes: u8,
    pub ignore_label: u8,
    pub labels: Vec<u8>,
}

impl SegMap {
    pub fn new(
        height: usize,
        width: usize,
        classes: u8,
        ignore_label: u8,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if classes == 0 || classes >= ignore_label {
            return Err(Error::Config(format!(
                "class count {classes} must be positive and below ignore label {ignore_label}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} labels for {height}x{width} map",
                labels.len()
            )));
        }
        if let Some(bad) = labels
            .iter()
            .find(|l| **l >= classes && **l != ignore_label)
        {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(SegMap {
            height,
            width,
            classes,
            ignore_label,
            labels,
        })
    }

    pub fn from_gray(img: &GrayImage, classes: u8, ignore_label: u8) -> Result<Self> {
        SegMap::new(
            img.height,
            img.width,
            classes,
            ignore_label,
            img.pixels.clone(),
        )
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegMode {
    Image,
    Latent,
}

impl SegMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegMode::Image => "image",
            SegMode::Latent => "latent",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "image" => Ok(SegMode::Image),
            "latent" => Ok(SegMode::Latent),
            other => Err(Error::Config(format!("unknown mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    DualGraph,
    PlainConv,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::DualGraph => "dual_graph",
            HeadKind::PlainConv => "plain_conv",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "dual_graph" => Ok(HeadKind::DualGraph),
            "plain_conv" => Ok(HeadKind::PlainConv),
            other => Err(Error::Config(format!("unknown head {other}"))),
        }
    }
}

/// Architecture hyperparameters of a segmentation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegNetConfig {
    pub mode: SegMode,
    /// 3 in image mode, the codec's latent channels in latent mode.
    pub in_channels: usize,
    pub classes: u8,
    pub ignore_label: u8,
    /// Spatial factor between the processing grid and the image: the codec's
    /// `s` in latent mode, and the stem stride in image mode.
    pub seg_stride: usize,
    /// Channels fed to the backbone (stem output in image mode).
    pub stem_channels: usize,
    /// Backbone width.
    pub width: usize,
    pub blocks: usize,
    pub head: HeadKind,
    pub graph_nodes: usize,
    pub node_dim: usize,
    pub coord_dim: usize,
    pub attn_dim: usize,
}

impl SegNetConfig {
    pub fn latent(latent_channels: usize, classes: u8, seg_stride: usize) -> Self {
        SegNetConfig {
            mode: SegMode::Latent,
            in_channels: latent_channels,
            classes,
            ignore_label: 255,
            seg_stride,
            stem_channels: latent_channels,
            width: 32,
            blocks: 2,
            head: HeadKind::DualGraph,
            graph_nodes: 16,
            node_dim: 16,
            coord_dim: 16,
            attn_dim: 8,
        }
    }

    pub fn image(classes: u8, seg_stride: usize) -> Self {
        SegNetConfig {
            mode: SegMode::Image,
            in_channels: 3,
            ..Self::latent(16, classes, seg_stride)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes >= self.ignore_label {
            return Err(Error::Config("invalid class count".into()));
        }
        match self.mode {
            SegMode::Image => {
                if self.in_channels != 3 {
                    return Err(Error::Config(format!(
                        "image mode takes 3 input channels, got {}",
                        self.in_channels
                    )));
                }
                if !matches!(self.seg_stride, 8 | 16 | 32) {
                    return Err(Error::Config(format!(
                        "image-mode stem stride must be 8, 16, or 32, got {}",
                        self.seg_stride
                    )));
                }
            }
            SegMode::Latent => {
                if self.in_channels == 0 {
                    return Err(Error::Config("latent mode needs input channels".into()));
                }
            }
        }
        if self.width == 0 || self.stem_channels == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        if self.head == HeadKind::DualGraph
            && (self.graph_nodes < 1 || self.node_dim < 1 || self.coord_dim < 1 || self.attn_dim < 1)
        {
            return Err(Error::Config("graph head dims must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "mode={}\nin_channels={}\nclasses={}\nignore_label={}\nseg_stride={}\nstem_channels={}\nwidth={}\nblocks={}\nhead={}\ngraph_nodes={}\nnode_dim={}\ncoord_dim={}\nattn_dim={}\n",
            self.mode.as_str(),
            self.in_channels,
            self.classes,
            self.ignore_label,
            self.seg_stride,
            self.stem_channels,
            self.width,
            self.blocks,
            self.head.as_str(),
            self.graph_nodes,
            self.node_dim,
            self.coord_dim,
            self.attn_dim
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut config = SegNetConfig::latent(16, 4, 8);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let value = value.trim();
            let parse = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::Config(format!("line {}: bad number {v}", lineno + 1)))
            };
            match key.trim() {
                "mode" => config.mode = SegMode::parse(value)?,
                "in_channels" => config.in_channels = parse(value)?,
                "classes" => config.classes = parse(value)? as u8,
                "ignore_label" => config.ignore_label = parse(value)? as u8,
                "seg_stride" => config.seg_stride = parse(value)?,
                "stem_channels" => config.stem_channels = parse(value)?,
                "width" => config.width = parse(value)?,
                "blocks" => config.blocks = parse(value)?,
                "head" => config.head = HeadKind::parse(value)?,
                "graph_nodes" => config.graph_nodes = parse(value)?,
                "node_dim" => config.node_dim = parse(value)?,
                "coord_dim" => config.coord_dim = parse(value)?,
                "attn_dim" => config.attn_dim = parse(value)?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other}",
                        lineno + 1
                    )))
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_key_values())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_key_values(&std::fs::read_to_string(path)?)
    }
}

/// Pre-activation residual block: out = conv2(relu(conv1(relu(x)))) + skip(x).
/// With zeroed conv weights the output equals the (projected) input exactly.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    projection: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(cin: usize, cout: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(cin, cout, 3, 1, 1, rng),
            conv2: Conv2d::new(cout, cout, 3, 1, 1, rng),
            projection: (cin != cout).then(|| Conv2d::new(cin, cout, 1, 1, 0, rng)),
        }
    }

    /// Test handle: zeroes both residual convs so the block is an identity
    /// (or pure projection).
    pub fn zero_residual_path(&mut self) {
        let s1 = self.conv1.weight.shape();
        self.conv1.weight = Tensor::zeros(s1);
        let s2 = self.conv2.weight.shape();
        self.conv2.weight = Tensor::zeros(s2);
    }

    pub fn bind(&self, tape: &mut Tape, rec: &mut Vec<Var>, trainable: bool) -> BoundResidualBlock {
        BoundResidualBlock {
            conv1: self.conv1.bind(tape, rec, trainable),
            conv2: self.conv2.bind(tape, rec, trainable),
            projection: self.projection.as_ref().map(|p| p.bind(tape, rec, trainable)),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.conv1.collect(&format!("{prefix}.conv1"), out);
        self.conv2.collect(&format!("{prefix}.conv2"), out);
        if let Some(p) = &self.projection {
            p.collect(&format!("{prefix}.projection"), out);
        }
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.conv1.collect_mut(&format!("{prefix}.conv1"), out);
        self.conv2.collect_mut(&format!("{prefix}.conv2"), out);
        if let Some(p) = &mut self.projection {
            p.collect_mut(&format!("{prefix}.projection"), out);
        }
    }
}

pub struct BoundResidualBlock {
    conv1: BoundConv,
    conv2: BoundConv,
    projection: Option<BoundConv>,
}

impl BoundResidualBlock {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut t = tape.relu(x);
        t = self.conv1.forward(tape, t)?;
        t = tape.relu(t);
        t = self.conv2.forward(tape, t)?;
        let skip = match &self.projection {
            Some(p) => p.forward(tape, x)?,
            None => x,
        };
        tape.add(t, skip)
    }
}

/// Dual-graph reasoning head.
#[derive(Debug, Clone)]
pub struct DualGraphHead {
    // coordinate branch
    coord_reduce: Conv2d,
    coord_query: Conv2d,
    coord_key: Conv2d,
    coord_weight: MatParam,
    coord_out: Conv2d,
    // feature branch
    assign: Conv2d,
    feat_reduce: Conv2d,
    node_adjacency: MatParam,
    node_weight: MatParam,
    feat_out: Conv2d,
}

impl DualGraphHead {
    pub fn new(config: &SegNetConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let c = config.width;
        DualGraphHead {
            coord_reduce: Conv2d::new(c, config.coord_dim, 1, 1, 0, rng),
            coord_query: Conv2d::new(config.coord_dim, config.attn_dim, 1, 1, 0, rng),
            coord_key: Conv2d::new(config.coord_dim, config.attn_dim, 1, 1, 0, rng),
            coord_weight: MatParam::kaiming(config.coord_dim, config.coord_dim, rng),
            coord_out: Conv2d::zeroed(config.coord_dim, c, 1, 1, 0),
            assign: Conv2d::new(c, config.graph_nodes, 1, 1, 0, rng),
            feat_reduce: Conv2d::new(c, config.node_dim, 1, 1, 0, rng),
            node_adjacency: MatParam::zeros(config.graph_nodes, config.graph_nodes),
            node_weight: MatParam::kaiming(config.node_dim, config.node_dim, rng),
            feat_out: Conv2d::zeroed(config.node_dim, c, 1, 1, 0),
        }
    }

    pub fn bind(&self, tape: &mut Tape, rec: &mut Vec<Var>, trainable: bool) -> BoundDualGraphHead {
        BoundDualGraphHead {
            coord_reduce: self.coord_reduce.bind(tape, rec, trainable),
            coord_query: self.coord_query.bind(tape, rec, trainable),
            coord_key: self.coord_key.bind(tape, rec, trainable),
            coord_weight: self.coord_weight.bind(tape, rec, trainable),
            coord_out: self.coord_out.bind(tape, rec, trainable),
            assign: self.assign.bind(tape, rec, trainable),
            feat_reduce: self.feat_reduce.bind(tape, rec, trainable),
            node_adjacency: self.node_adjacency.bind(tape, rec, trainable),
            node_weight: self.node_weight.bind(tape, rec, trainable),
            feat_out: self.feat_out.bind(tape, rec, trainable),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.coord_reduce.collect(&format!("{prefix}.coord_reduce"), out);
        self.coord_query.collect(&format!("{prefix}.coord_query"), out);
        self.coord_key.collect(&format!("{prefix}.coord_key"), out);
        self.coord_weight.collect(&format!("{prefix}.coord_weight"), out);
        self.coord_out.collect(&format!("{prefix}.coord_out"), out);
        self.assign.collect(&format!("{prefix}.assign"), out);
        self.feat_reduce.collect(&format!("{prefix}.feat_reduce"), out);
        self.node_adjacency.collect(&format!("{prefix}.node_adjacency"), out);
        self.node_weight.collect(&format!("{prefix}.node_weight"), out);
        self.feat_out.collect(&format!("{prefix}.feat_out"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.coord_reduce.collect_mut(&format!("{prefix}.coord_reduce"), out);
        self.coord_query.collect_mut(&format!("{prefix}.coord_query"), out);
        self.coord_key.collect_mut(&format!("{prefix}.coord_key"), out);
        self.coord_weight.collect_mut(&format!("{prefix}.coord_weight"), out);
        self.coord_out.collect_mut(&format!("{prefix}.coord_out"), out);
        self.assign.collect_mut(&format!("{prefix}.assign"), out);
        self.feat_reduce.collect_mut(&format!("{prefix}.feat_reduce"), out);
        self.node_adjacency.collect_mut(&format!("{prefix}.node_adjacency"), out);
        self.node_weight.collect_mut(&format!("{prefix}.node_weight"), out);
        self.feat_out.collect_mut(&format!("{prefix}.feat_out"), out);
    }
}

pub struct BoundDualGraphHead {
    coord_reduce: BoundConv,
    coord_query: BoundConv,
    coord_key: BoundConv,
    coord_weight: Var,
    coord_out: BoundConv,
    assign: BoundConv,
    feat_reduce: BoundConv,
    node_adjacency: Var,
    node_weight: Var,
    feat_out: BoundConv,
}

/// Flattens (1, C, H, W) into a (1, 1, H*W, C) pixel matrix.
fn pixels_matrix(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.value(x).shape();
    let flat = tape.reshape(x, Shape::new(1, 1, s.c, s.h * s.w))?;
    Ok(tape.transpose_hw(flat))
}

/// Inverse of [`pixels_matrix`]: (1, 1, H*W, C) back to (1, C, H, W).
fn matrix_pixels(tape: &mut Tape, m: Var, c: usize, h: usize, w: usize) -> Result<Var> {
    let t = tape.transpose_hw(m);
    tape.reshape(t, Shape::new(1, c, h, w))
}

impl BoundDualGraphHead {
    /// Coordinate branch: pool, reduce, one propagation step across pixels
    /// with an affinity from learned projections, unpool, zero-init output.
    pub fn coord_branch(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let pooled = tape.avg_pool2(x)?;
        let mut v = self.coord_reduce.forward(tape, pooled)?;
        v = tape.relu(v);
        let s = tape.value(v).shape();
        let (dim, h2, w2) = (s.c, s.h, s.w);

        let q = self.coord_query.forward(tape, v)?;
        let k = self.coord_key.forward(tape, v)?;
        let qm = pixels_matrix(tape, q)?; // (P, Da)
        let km_t = {
            let s = tape.value(k).shape();
            tape.reshape(k, Shape::new(1, 1, s.c, s.h * s.w))? // (Da, P)
        };
        let scores = tape.matmul(qm, km_t)?; // (P, P)
        let affinity = tape.softmax(scores, 3)?;

        let vm = pixels_matrix(tape, v)?; // (P, Dc)
        let mixed = tape.matmul(affinity, vm)?;
        let mixed = tape.matmul(mixed, self.coord_weight)?;
        let mixed = tape.relu(mixed);
        let spatial = matrix_pixels(tape, mixed, dim, h2, w2)?;
        let up = tape.upsample_nearest(spatial, 2)?;
        self.coord_out.forward(tape, up)
    }

    /// Feature branch: softmax assignment onto graph nodes,
    /// V' = ReLU((I - A) V W), reprojection, zero-init output.
    pub fn feature_branch(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.value(x).shape();
        let (h, w) = (s.h, s.w);

        let logits = self.assign.forward(tape, x)?;
        let soft = tape.softmax(logits, 1)?; // per-pixel distribution over nodes
        let assign = pixels_matrix(tape, soft)?; // B: (P, Kn)

        let reduced = self.feat_reduce.forward(tape, x)?;
        let pix = pixels_matrix(tape, reduced)?; // (P, Dn)
        let assign_t = tape.transpose_hw(assign); // (Kn, P)
        let nodes = tape.matmul(assign_t, pix)?; // V: (Kn, Dn)

        let kn = tape.value(self.node_adjacency).shape().h;
        let eye = {
            let mut data = vec![0.0f32; kn * kn];
            for i in 0..kn {
                data[i * kn + i] = 1.0;
            }
            let t = Tensor::from_vec(Shape::new(1, 1, kn, kn), data)?;
            tape.leaf(t, false)
        };
        let laplacian = tape.sub(eye, self.node_adjacency)?;
        let mixed = tape.matmul(laplacian, nodes)?;
        let mixed = tape.matmul(mixed, self.node_weight)?;
        let updated = tape.relu(mixed); // V'

        let back = tape.matmul(assign, updated)?; // (P, Dn)
        let spatial = matrix_pixels(tape, back, tape.value(updated).shape().w, h, w)?;
        self.feat_out.forward(tape, spatial)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.value(x).shape();
        if s.n != 1 {
            return Err(Error::Shape("graph head runs on single-sample batches".into()));
        }
        let coord = self.coord_branch(tape, x)?;
        let feat = self.feature_branch(tape, x)?;
        let sum = tape.add(x, coord)?;
        tape.add(sum, feat)
    }
}

#[derive(Debug, Clone)]
enum Head {
    DualGraph(DualGraphHead),
    PlainConv(Conv2d),
}

enum BoundHead {
    DualGraph(BoundDualGraphHead),
    PlainConv(BoundConv),
}

/// Segmentation network: optional stem, backbone, head, classifier.
#[derive(Debug, Clone)]
pub struct SegNet {
    pub config: SegNetConfig,
    stem: Option<Conv2d>,
    initial: Conv2d,
    blocks: Vec<ResidualBlock>,
    head: Head,
    classifier: Conv2d,
}

pub struct BoundSegNet {
    stem: Option<BoundConv>,
    initial: BoundConv,
    blocks: Vec<BoundResidualBlock>,
    head: BoundHead,
    classifier: BoundConv,
    mode: SegMode,
    seg_stride: usize,
}

/// Builds an initialized segmentation network; identical seeds give
/// bit-identical weights.
pub fn build_seg_net(config: SegNetConfig, seed: u64) -> Result<SegNet> {
    config.validate()?;
    let mut rng = seeded_rng(seed);
    let stem = match config.mode {
        SegMode::Image => Some(Conv2d::new(
            3,
            config.stem_channels,
            config.seg_stride,
            config.seg_stride,
            0,
            &mut rng,
        )),
        SegMode::Latent => None,
    };
    let backbone_in = match config.mode {
        SegMode::Image => config.stem_channels,
        SegMode::Latent => config.in_channels,
    };
    let initial = Conv2d::new(backbone_in, config.width, 3, 1, 1, &mut rng);
    let blocks = (0..config.blocks)
        .map(|_| ResidualBlock::new(config.width, config.width, &mut rng))
        .collect();
    let head = match config.head {
        HeadKind::DualGraph => Head::DualGraph(DualGraphHead::new(&config, &mut rng)),
        HeadKind::PlainConv => Head::PlainConv(Conv2d::new(config.width, config.width, 3, 1, 1, &mut rng)),
    };
    let classifier = Conv2d::new(config.width, config.classes as usize, 1, 1, 0, &mut rng);
    Ok(SegNet {
        config,
        stem,
        initial,
        blocks,
        head,
        classifier,
    })
}

impl SegNet {
    pub fn bind(&self, tape: &mut Tape, rec: &mut Vec<Var>, trainable: bool) -> BoundSegNet {
        BoundSegNet {
            stem: self.stem.as_ref().map(|s| s.bind(tape, rec, trainable)),
            initial: self.initial.bind(tape, rec, trainable),
            blocks: self.blocks.iter().map(|b| b.bind(tape, rec, trainable)).collect(),
            head: match &self.head {
                Head::DualGraph(h) => BoundHead::DualGraph(h.bind(tape, rec, trainable)),
                Head::PlainConv(c) => BoundHead::PlainConv(c.bind(tape, rec, trainable)),
            },
            classifier: self.classifier.bind(tape, rec, trainable),
            mode: self.config.mode,
            seg_stride: self.config.seg_stride,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(s) = &self.stem {
            s.collect("seg.stem", &mut out);
        }
        self.initial.collect("seg.initial", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("seg.block{i}"), &mut out);
        }
        match &self.head {
            Head::DualGraph(h) => h.collect("seg.head", &mut out),
            Head::PlainConv(c) => c.collect("seg.head.conv", &mut out),
        }
        self.classifier.collect("seg.classifier", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(s) = &mut self.stem {
            s.collect_mut("seg.stem", &mut out);
        }
        self.initial.collect_mut("seg.initial", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("seg.block{i}"), &mut out);
        }
        match &mut self.head {
            Head::DualGraph(h) => h.collect_mut("seg.head", &mut out),
            Head::PlainConv(c) => c.collect_mut("seg.head.conv", &mut out),
        }
        self.classifier.collect_mut("seg.classifier", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = input.shape();
        if s.n != 1 || s.c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "{} mode expects (1,{},H,W) input, got {s}",
                self.config.mode.as_str(),
                self.config.in_channels
            )));
        }
        if self.config.mode == SegMode::Image
            && (s.h % self.config.seg_stride != 0 || s.w % self.config.seg_stride != 0)
        {
            return Err(Error::Shape(format!(
                "image {}x{} not divisible by stem stride {}",
                s.h, s.w, self.config.seg_stride
            )));
        }
        input.check_finite("segmentation input")
    }

    /// Logits at the original image resolution:
    /// (1, K, H*s, W*s) in latent mode, (1, K, H, W) in image mode.
    pub fn segment(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = self.bind(&mut tape, &mut rec, false);
        let x = tape.leaf(input.clone(), false);
        let logits = bound.forward(&mut tape, x)?;
        Ok(tape.value(logits).clone())
    }

    /// MACs of one forward pass at the given input shape.
    pub fn count_macs(&self, input_shape: Shape) -> Result<u64> {
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = self.bind(&mut tape, &mut rec, false);
        let x = tape.leaf(Tensor::zeros(input_shape), false);
        bound.forward(&mut tape, x)?;
        Ok(tape.macs())
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.named_params())
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let mut params = self.named_params_mut();
        checkpoint::load_into(path, &mut params)
    }
}

impl BoundSegNet {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let in_shape = tape.value(input).shape();
        let (target_h, target_w) = match self.mode {
            SegMode::Image => (in_shape.h, in_shape.w),
            SegMode::Latent => (in_shape.h * self.seg_stride, in_shape.w * self.seg_stride),
        };
        let mut x = input;
        if let Some(stem) = &self.stem {
            x = stem.forward(tape, x)?;
            x = tape.relu(x);
        }
        x = self.initial.forward(tape, x)?;
        x = tape.relu(x);
        for block in &self.blocks {
            x = block.forward(tape, x)?;
        }
        x = match &self.head {
            BoundHead::DualGraph(h) => h.forward(tape, x)?,
            BoundHead::PlainConv(c) => {
                let t = c.forward(tape, x)?;
                tape.relu(t)
            }
        };
        let logits = self.classifier.forward(tape, x)?;
        tape.upsample_bilinear(logits, target_h, target_w)
    }
}

/// Per-pixel argmax; ties resolve to the lowest class index.
pub fn predict(logits: &Tensor, ignore_label: u8) -> Result<SegMap> {
    let s = logits.shape();
    if s.n != 1 || s.c == 0 {
        return Err(Error::Shape(format!("expected (1,K,H,W) logits, got {s}")));
    }
    let plane = s.h * s.w;
    let mut labels = vec![0u8; plane];
    for p in 0..plane {
        let mut best = 0usize;
        let mut best_v = logits.data()[p];
        for k in 1..s.c {
            let v = logits.data()[k * plane + p];
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        labels[p] = best as u8;
    }
    SegMap::new(s.h, s.w, s.c as u8, ignore_label, labels)
}

/// Trains on (input, mask) pairs with pixelwise cross-entropy; inputs are
/// visited cyclically, one per iteration. Returns the per-iteration loss.
pub fn train_seg(
    net: &mut SegNet,
    pairs: &[(Tensor, SegMap)],
    iterations: usize,
    opt: &mut Optimizer,
) -> Result<Vec<f32>> {
    if pairs.is_empty() {
        return Err(Error::Validation("segmentation training set is empty".into()));
    }
    for (input, mask) in pairs {
        net.check_input(input)?;
        if mask.classes != net.config.classes {
            return Err(Error::Config(format!(
                "mask has {} classes, network predicts {}",
                mask.classes, net.config.classes
            )));
        }
        let s = input.shape();
        let scale = match net.config.mode {
            SegMode::Image => 1,
            SegMode::Latent => net.config.seg_stride,
        };
        if mask.height != s.h * scale || mask.width != s.w * scale {
            return Err(Error::Shape(format!(
                "mask {}x{} does not match input {} at stride {scale}",
                mask.height, mask.width, s
            )));
        }
    }
    let ignore = net.config.ignore_label;
    let mut history = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let (input, mask) = &pairs[it % pairs.len()];
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = net.bind(&mut tape, &mut rec, true);
        let x = tape.leaf(input.clone(), false);
        let step = (|| -> Result<f32> {
            let logits = bound.forward(&mut tape, x)?;
            let loss = tape.cross_entropy(logits, &mask.labels, ignore)?;
            let value = tape.value(loss).data()[0];
            tape.backward(loss)?;
            Ok(value)
        })();
        let loss_value = step.map_err(|e| {
            Error::Numeric(format!("segmentation training diverged at iteration {it}: {e}"))
        })?;
        let grads = grads_for(&tape, &rec);
        let mut named = net.named_params_mut();
        let mut params: Vec<&mut Tensor> = named.iter_mut().map(|(_, t)| &mut **t).collect();
        opt.step(&mut params, &grads)?;
        history.push(loss_value);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_logits_land_on_original_resolution() {
        for (d, s) in [(1u8, 8usize), (2, 16), (3, 32)] {
            let config = SegNetConfig::latent(16, 4, s);
            let net = build_seg_net(config, 5).unwrap();
            let latent = Tensor::zeros(Shape::new(1, 16, 64 / s, 64 / s));
            let logits = net.segment(&latent).unwrap();
            assert_eq!(logits.shape(), Shape::new(1, 4, 64, 64), "d={d}");
        }
    }

    #[test]
    fn image_mode_matches_input_resolution() {
        let net = build_seg_net(SegNetConfig::image(4, 8), 5).unwrap();
        let image = Tensor::zeros(Shape::new(1, 3, 64, 64));
        let logits = net.segment(&image).unwrap();
        assert_eq!(logits.shape(), Shape::new(1, 4, 64, 64));
    }

    #[test]
    fn mode_mismatch_rejected() {
        let net = build_seg_net(SegNetConfig::latent(16, 4, 8), 5).unwrap();
        let image = Tensor::zeros(Shape::new(1, 3, 64, 64));
        assert!(net.segment(&image).is_err());
    }

    #[test]
    fn predict_argmax_and_tie_break() {
        // class 2 maximal everywhere
        let mut data = vec![0.0f32; 3 * 4];
        for p in 0..4 {
            data[2 * 4 + p] = 5.0;
        }
        let logits = Tensor::from_vec(Shape::new(1, 3, 2, 2), data).unwrap();
        let map = predict(&logits, 255).unwrap();
        assert!(map.labels.iter().all(|l| *l == 2));

        // tie between classes 1 and 3 resolves to 1
        let mut data = vec![0.0f32; 4 * 1];
        data[1] = 7.0;
        data[3] = 7.0;
        let logits = Tensor::from_vec(Shape::new(1, 4, 1, 1), data).unwrap();
        let map = predict(&logits, 255).unwrap();
        assert_eq!(map.labels, vec![1]);
    }

    #[test]
    fn residual_block_zeroed_is_identity() {
        let mut rng = seeded_rng(2);
        let mut block = ResidualBlock::new(8, 8, &mut rng);
        block.zero_residual_path();
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = block.bind(&mut tape, &mut rec, false);
        let x_t = Tensor::from_vec(
            Shape::new(1, 8, 2, 2),
            (0..32).map(|i| i as f32 * 0.1 - 1.0).collect(),
        )
        .unwrap();
        let x = tape.leaf(x_t.clone(), false);
        let y = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), x_t.data());

        // with a channel change the zeroed block reduces to the projection
        let mut wide = ResidualBlock::new(4, 6, &mut rng);
        wide.zero_residual_path();
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = wide.bind(&mut tape, &mut rec, false);
        let x = tape.leaf(Tensor::full(Shape::new(1, 4, 2, 2), 0.3), false);
        let y = bound.forward(&mut tape, x).unwrap();
        let proj = wide.projection.as_ref().unwrap();
        let mut ptape = Tape::new();
        let mut prec = Vec::new();
        let pbound = proj.bind(&mut ptape, &mut prec, false);
        let px = ptape.leaf(Tensor::full(Shape::new(1, 4, 2, 2), 0.3), false);
        let py = pbound.forward(&mut ptape, px).unwrap();
        assert_eq!(tape.value(y).data(), ptape.value(py).data());
    }

    #[test]
    fn head_is_identity_at_init() {
        let config = SegNetConfig::latent(16, 4, 8);
        let head = DualGraphHead::new(&config, &mut seeded_rng(3));
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = head.bind(&mut tape, &mut rec, false);
        let x_t = Tensor::from_vec(
            Shape::new(1, 32, 4, 4),
            (0..512).map(|i| ((i * 7919) % 100) as f32 / 50.0 - 1.0).collect(),
        )
        .unwrap();
        let x = tape.leaf(x_t.clone(), false);
        let y = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), x_t.data());
    }

    #[test]
    fn assignment_rows_sum_to_one() {
        let config = SegNetConfig::latent(16, 4, 8);
        let head = DualGraphHead::new(&config, &mut seeded_rng(4));
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = head.bind(&mut tape, &mut rec, false);
        let x = tape.leaf(
            Tensor::from_vec(
                Shape::new(1, 32, 4, 4),
                (0..512).map(|i| (i as f32).sin()).collect(),
            )
            .unwrap(),
            false,
        );
        let logits = bound.assign.forward(&mut tape, x).unwrap();
        let soft = tape.softmax(logits, 1).unwrap();
        let s = tape.value(soft).shape();
        for p in 0..s.h * s.w {
            let total: f32 = (0..s.c).map(|k| tape.value(soft).data()[k * s.h * s.w + p]).sum();
            assert!((total - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn seg_config_roundtrip() {
        let config = SegNetConfig::image(4, 8);
        let text = config.to_key_values();
        assert_eq!(SegNetConfig::from_key_values(&text).unwrap(), config);
        assert!(SegNetConfig::from_key_values("head=fancy").is_err());
    }

    #[test]
    fn segmap_validates_labels() {
        assert!(SegMap::new(1, 2, 4, 255, vec![0, 3]).is_ok());
        assert!(SegMap::new(1, 2, 4, 255, vec![0, 255]).is_ok());
        assert!(SegMap::new(1, 2, 4, 255, vec![0, 4]).is_err());
        assert!(SegMap::new(1, 3, 4, 255, vec![0, 1]).is_err());
    }

    #[test]
    fn single_pair_training_reduces_loss() {
        let config = SegNetConfig::latent(16, 4, 8);
        let mut net = build_seg_net(config, 7).unwrap();
        let input = Tensor::from_vec(
            Shape::new(1, 16, 4, 4),
            (0..256).map(|i| ((i % 17) as f32) / 17.0).collect(),
        )
        .unwrap();
        let labels: Vec<u8> = (0..32 * 32)
            .map(|p| if p % 32 < 16 { 0 } else { 2 })
            .collect();
        let mask = SegMap::new(32, 32, 4, 255, labels).unwrap();
        let mut opt = Optimizer::sgd(1e-2, 0.9);
        let history = train_seg(&mut net, &[(input, mask)], 60, &mut opt).unwrap();
        assert!(
            history.last().unwrap() < &(history[0] * 0.5),
            "loss did not halve: {} -> {}",
            history[0],
            history.last().unwrap()
        );
    }
}
