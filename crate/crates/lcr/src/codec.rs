//! Compressor / decompressor networks and their training loop.
//!
//! The compressor is a patchify stem (stride 4) followed by `d` digest
//! units (stride-2 conv + ReLU each) and a 1x1 projection to the latent
//! channels. The decompressor mirrors it with nearest-neighbor upsampling
//! before each conv; its output layer is a clamped linear activation to
//! [0, 1]. Total spatial factor: s = stem_stride * digest_stride^d.

use std::path::Path;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{grads_for, BoundConv, Conv2d};
use crate::optim::Optimizer;
use crate::quant::quantize_dequantize;
use crate::tensor::init::seeded_rng;
use crate::tensor::{Shape, Tape, Tensor, Var};

/// Architecture hyperparameters of one codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    /// Digest-unit count d; controls the compression factor.
    pub digest_units: u8,
    /// Quantization bit length n.
    pub bits: u8,
    pub latent_channels: usize,
    pub stem_stride: usize,
    pub digest_stride: usize,
    pub hidden_channels: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            digest_units: 1,
            bits: 8,
            latent_channels: 16,
            stem_stride: 4,
            digest_stride: 2,
            hidden_channels: 32,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.digest_units) {
            return Err(Error::Config(format!(
                "digest units must be in [1, 3], got {}",
                self.digest_units
            )));
        }
        if !(2..=8).contains(&self.bits) {
            return Err(Error::Config(format!(
                "bit length must be in [2, 8], got {}",
                self.bits
            )));
        }
        if self.latent_channels == 0 || self.latent_channels > 255 {
            return Err(Error::Config(format!(
                "latent channels must be in [1, 255], got {}",
                self.latent_channels
            )));
        }
        if self.hidden_channels == 0 {
            return Err(Error::Config("hidden channels must be positive".into()));
        }
        // mirrored by nearest-neighbor upsampling, which supports x2 and x4
        for (name, stride) in [("stem", self.stem_stride), ("digest", self.digest_stride)] {
            if stride != 2 && stride != 4 {
                return Err(Error::Config(format!(
                    "{name} stride must be 2 or 4, got {stride}"
                )));
            }
        }
        Ok(())
    }

    /// Total spatial downsampling factor s.
    pub fn spatial_factor(&self) -> usize {
        self.stem_stride * self.digest_stride.pow(self.digest_units as u32)
    }

    /// Latent shape for an input of the given spatial size.
    pub fn latent_shape(&self, height: usize, width: usize) -> Result<Shape> {
        let s = self.spatial_factor();
        if height % s != 0 || width % s != 0 {
            return Err(Error::Shape(format!(
                "input {height}x{width} not divisible by spatial factor {s}"
            )));
        }
        Ok(Shape::new(1, self.latent_channels, height / s, width / s))
    }

    /// Plain-text key=value form.
    pub fn to_key_values(&self) -> String {
        format!(
            "digest_units={}\nbits={}\nlatent_channels={}\nstem_stride={}\ndigest_stride={}\nhidden_channels={}\n",
            self.digest_units,
            self.bits,
            self.latent_channels,
            self.stem_stride,
            self.digest_stride,
            self.hidden_channels
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut config = CodecConfig::default();
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
                "digest_units" => config.digest_units = parse(value)? as u8,
                "bits" => config.bits = parse(value)? as u8,
                "latent_channels" => config.latent_channels = parse(value)?,
                "stem_stride" => config.stem_stride = parse(value)?,
                "digest_stride" => config.digest_stride = parse(value)?,
                "hidden_channels" => config.hidden_channels = parse(value)?,
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

/// Encoder: image (1, 3, H, W) in [0, 1] -> latent (1, C, H/s, W/s).
#[derive(Debug, Clone)]
pub struct Compressor {
    stem: Conv2d,
    digest: Vec<Conv2d>,
    head: Conv2d,
}

/// Decoder: latent -> image (1, 3, H, W) clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct Decompressor {
    inlet: Conv2d,
    expand: Vec<Conv2d>,
    outlet: Conv2d,
    digest_factor: usize,
    stem_factor: usize,
}

pub struct BoundCompressor {
    stem: BoundConv,
    digest: Vec<BoundConv>,
    head: BoundConv,
}

pub struct BoundDecompressor {
    inlet: BoundConv,
    expand: Vec<BoundConv>,
    outlet: BoundConv,
    digest_factor: usize,
    stem_factor: usize,
}

impl Compressor {
    fn new(config: &CodecConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let stem = Conv2d::new(
            3,
            config.hidden_channels,
            config.stem_stride,
            config.stem_stride,
            0,
            rng,
        );
        let digest = (0..config.digest_units)
            .map(|_| {
                Conv2d::new(
                    config.hidden_channels,
                    config.hidden_channels,
                    3,
                    config.digest_stride,
                    1,
                    rng,
                )
            })
            .collect();
        let head = Conv2d::new(config.hidden_channels, config.latent_channels, 1, 1, 0, rng);
        Compressor { stem, digest, head }
    }

    pub fn bind(&self, tape: &mut Tape, rec: &mut Vec<Var>, trainable: bool) -> BoundCompressor {
        BoundCompressor {
            stem: self.stem.bind(tape, rec, trainable),
            digest: self.digest.iter().map(|c| c.bind(tape, rec, trainable)).collect(),
            head: self.head.bind(tape, rec, trainable),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.stem.collect(&format!("{prefix}.stem"), out);
        for (i, c) in self.digest.iter().enumerate() {
            c.collect(&format!("{prefix}.digest{i}"), out);
        }
        self.head.collect(&format!("{prefix}.head"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.stem.collect_mut(&format!("{prefix}.stem"), out);
        for (i, c) in self.digest.iter_mut().enumerate() {
            c.collect_mut(&format!("{prefix}.digest{i}"), out);
        }
        self.head.collect_mut(&format!("{prefix}.head"), out);
    }
}

impl BoundCompressor {
    pub fn forward(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        let mut x = self.stem.forward(tape, image)?;
        x = tape.relu(x);
        for unit in &self.digest {
            x = unit.forward(tape, x)?;
            x = tape.relu(x);
        }
        self.head.forward(tape, x)
    }
}

impl Decompressor {
    fn new(config: &CodecConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let inlet = Conv2d::new(config.latent_channels, config.hidden_channels, 1, 1, 0, rng);
        let expand = (0..config.digest_units)
            .map(|_| {
                Conv2d::new(
                    config.hidden_channels,
                    config.hidden_channels,
                    3,
                    1,
                    1,
                    rng,
                )
            })
            .collect();
        let mut outlet = Conv2d::new(config.hidden_channels, 3, 3, 1, 1, rng);
        // start at mid-gray so the clamped output has gradient everywhere
        for b in outlet.bias.data_mut() {
            *b = 0.5;
        }
        Decompressor {
            inlet,
            expand,
            outlet,
            digest_factor: config.digest_stride,
            stem_factor: config.stem_stride,
        }
    }

    pub fn bind(&self, tape: &mut Tape, rec: &mut Vec<Var>, trainable: bool) -> BoundDecompressor {
        BoundDecompressor {
            inlet: self.inlet.bind(tape, rec, trainable),
            expand: self.expand.iter().map(|c| c.bind(tape, rec, trainable)).collect(),
            outlet: self.outlet.bind(tape, rec, trainable),
            digest_factor: self.digest_factor,
            stem_factor: self.stem_factor,
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.inlet.collect(&format!("{prefix}.inlet"), out);
        for (i, c) in self.expand.iter().enumerate() {
            c.collect(&format!("{prefix}.expand{i}"), out);
        }
        self.outlet.collect(&format!("{prefix}.outlet"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.inlet.collect_mut(&format!("{prefix}.inlet"), out);
        for (i, c) in self.expand.iter_mut().enumerate() {
            c.collect_mut(&format!("{prefix}.expand{i}"), out);
        }
        self.outlet.collect_mut(&format!("{prefix}.outlet"), out);
    }
}

impl BoundDecompressor {
    pub fn forward(&self, tape: &mut Tape, latent: Var) -> Result<Var> {
        let mut x = self.inlet.forward(tape, latent)?;
        x = tape.relu(x);
        for unit in &self.expand {
            x = unit.upsample_forward(tape, x, self.digest_factor)?;
            x = tape.relu(x);
        }
        let out = self.outlet.upsample_forward(tape, x, self.stem_factor)?;
        Ok(tape.clamp01(out))
    }
}

/// A compressor/decompressor pair with its config and training history.
#[derive(Debug, Clone)]
pub struct CodecPair {
    pub config: CodecConfig,
    pub compressor: Compressor,
    pub decompressor: Decompressor,
    /// Mean reconstruction MSE per trained epoch.
    pub history: Vec<f32>,
}

/// Builds an initialized codec; identical seeds give bit-identical weights.
pub fn build_codec(config: CodecConfig, seed: u64) -> Result<CodecPair> {
    config.validate()?;
    let mut rng = seeded_rng(seed);
    let compressor = Compressor::new(&config, &mut rng);
    let decompressor = Decompressor::new(&config, &mut rng);
    Ok(CodecPair {
        config,
        compressor,
        decompressor,
        history: Vec::new(),
    })
}

impl CodecPair {
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.compressor.collect("compressor", &mut out);
        self.decompressor.collect("decompressor", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.compressor.collect_mut("compressor", &mut out);
        self.decompressor.collect_mut("decompressor", &mut out);
        out
    }

    /// (compressor, decompressor) trainable parameter counts.
    pub fn param_counts(&self) -> (usize, usize) {
        let mut comp = Vec::new();
        self.compressor.collect("c", &mut comp);
        let mut dec = Vec::new();
        self.decompressor.collect("d", &mut dec);
        (
            comp.iter().map(|(_, t)| t.numel()).sum(),
            dec.iter().map(|(_, t)| t.numel()).sum(),
        )
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::Shape(format!("expected (1,3,H,W) image, got {s}")));
        }
        self.config.latent_shape(s.h, s.w)?;
        image.check_finite("codec input")?;
        if image.data().iter().any(|v| !(-1e-6..=1.0 + 1e-6).contains(v)) {
            return Err(Error::Validation("image values must be scaled to [0, 1]".into()));
        }
        Ok(())
    }

    /// Encodes an image into its latent tensor.
    pub fn compress_forward(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = self.compressor.bind(&mut tape, &mut rec, false);
        let x = tape.leaf(image.clone(), false);
        let latent = bound.forward(&mut tape, x)?;
        Ok(tape.value(latent).clone())
    }

    /// Decodes a latent tensor back to an image in [0, 1].
    pub fn decompress_forward(&self, latent: &Tensor) -> Result<Tensor> {
        let s = latent.shape();
        if s.n != 1 || s.c != self.config.latent_channels {
            return Err(Error::Shape(format!(
                "expected (1,{},h,w) latent, got {s}",
                self.config.latent_channels
            )));
        }
        latent.check_finite("latent")?;
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = self.decompressor.bind(&mut tape, &mut rec, false);
        let l = tape.leaf(latent.clone(), false);
        let image = bound.forward(&mut tape, l)?;
        Ok(tape.value(image).clone())
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.named_params())
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let mut params = self.named_params_mut();
        checkpoint::load_into(path, &mut params)
    }
}

/// Trains the pair end to end on reconstruction MSE; returns per-epoch mean
/// loss (also appended to `pair.history`). With `ste_quantization` the
/// forward latent is quantize-dequantized with a straight-through gradient;
/// parameter shapes are unchanged.
pub fn train_codec(
    pair: &mut CodecPair,
    dataset: &[Tensor],
    epochs: usize,
    opt: &mut Optimizer,
    ste_quantization: bool,
) -> Result<Vec<f32>> {
    if dataset.is_empty() {
        return Err(Error::Validation("codec training set is empty".into()));
    }
    for patch in dataset {
        pair.check_image(patch)?;
    }
    let bits = pair.config.bits;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        opt.step_lr(epoch);
        let mut epoch_loss = 0.0f64;
        for patch in dataset {
            let mut tape = Tape::new();
            let mut rec = Vec::new();
            let bc = pair.compressor.bind(&mut tape, &mut rec, true);
            let bd = pair.decompressor.bind(&mut tape, &mut rec, true);
            let x = tape.leaf(patch.clone(), false);
            let step = (|| -> Result<f32> {
                let mut latent = bc.forward(&mut tape, x)?;
                if ste_quantization {
                    let (qdq, _) = quantize_dequantize(tape.value(latent), bits)?;
                    latent = tape.passthrough(latent, qdq)?;
                }
                let recon = bd.forward(&mut tape, latent)?;
                let loss = tape.mse_loss(recon, x)?;
                let value = tape.value(loss).data()[0];
                tape.backward(loss)?;
                Ok(value)
            })();
            let loss_value = step.map_err(|e| {
                Error::Numeric(format!("codec training diverged at epoch {epoch}: {e}"))
            })?;
            let grads = grads_for(&tape, &rec);
            let mut params: Vec<&mut Tensor> = Vec::new();
            let mut named = pair.named_params_mut();
            for (_, t) in named.iter_mut() {
                params.push(t);
            }
            opt.step(&mut params, &grads)?;
            epoch_loss += loss_value as f64;
        }
        history.push((epoch_loss / dataset.len() as f64) as f32);
    }
    pair.history.extend_from_slice(&history);
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_shape_follows_spatial_factor() {
        let mut config = CodecConfig {
            digest_units: 2,
            ..CodecConfig::default()
        };
        assert_eq!(config.spatial_factor(), 16);
        assert_eq!(
            config.latent_shape(64, 64).unwrap(),
            Shape::new(1, 16, 4, 4)
        );
        config.digest_units = 1;
        assert_eq!(config.spatial_factor(), 8);
        assert_eq!(
            config.latent_shape(64, 64).unwrap(),
            Shape::new(1, 16, 8, 8)
        );
        assert!(config.latent_shape(60, 64).is_err());
    }

    #[test]
    fn identical_seeds_identical_weights() {
        let a = build_codec(CodecConfig::default(), 42).unwrap();
        let b = build_codec(CodecConfig::default(), 42).unwrap();
        let c = build_codec(CodecConfig::default(), 43).unwrap();
        let pa = a.named_params();
        let pb = b.named_params();
        let pc = c.named_params();
        for ((na, ta), (nb, tb)) in pa.iter().zip(&pb) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        assert!(pa.iter().zip(&pc).any(|((_, ta), (_, tc))| ta.data() != tc.data()));
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let pair = build_codec(CodecConfig::default(), 1).unwrap();
        let image = Tensor::zeros(Shape::new(1, 3, 64, 64));
        let latent = pair.compress_forward(&image).unwrap();
        assert_eq!(latent.shape(), Shape::new(1, 16, 8, 8));
        let latent2 = pair.compress_forward(&image).unwrap();
        assert_eq!(latent.data(), latent2.data());
        let recon = pair.decompress_forward(&latent).unwrap();
        assert_eq!(recon.shape(), Shape::new(1, 3, 64, 64));
        assert!(recon.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn indivisible_image_rejected() {
        let pair = build_codec(CodecConfig::default(), 1).unwrap();
        let image = Tensor::zeros(Shape::new(1, 3, 60, 64));
        assert!(pair.compress_forward(&image).is_err());
    }

    #[test]
    fn out_of_range_image_rejected() {
        let pair = build_codec(CodecConfig::default(), 1).unwrap();
        let image = Tensor::full(Shape::new(1, 3, 64, 64), 1.5);
        assert!(matches!(
            pair.compress_forward(&image),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn config_key_values_roundtrip() {
        let config = CodecConfig {
            digest_units: 3,
            bits: 4,
            latent_channels: 16,
            stem_stride: 4,
            digest_stride: 2,
            hidden_channels: 24,
        };
        let text = config.to_key_values();
        assert_eq!(CodecConfig::from_key_values(&text).unwrap(), config);
        assert!(CodecConfig::from_key_values("nope=1").is_err());
        assert!(CodecConfig::from_key_values("digest_units=7").is_err());
    }

    #[test]
    fn zero_image_dataset_trains_to_near_zero_loss() {
        let mut pair = build_codec(CodecConfig::default(), 5).unwrap();
        let data = vec![Tensor::zeros(Shape::new(1, 3, 32, 32)); 2];
        let mut opt = Optimizer::adam(1e-2);
        let history = train_codec(&mut pair, &data, 40, &mut opt, false).unwrap();
        assert!(history.last().unwrap() < &1e-4, "history: {history:?}");
        assert_eq!(pair.history, history);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data: Vec<Tensor> = (0..2)
            .map(|i| {
                let mut t = Tensor::zeros(Shape::new(1, 3, 32, 32));
                for (j, v) in t.data_mut().iter_mut().enumerate() {
                    *v = ((i * 37 + j * 13) % 256) as f32 / 255.0;
                }
                t
            })
            .collect();
        let run = || {
            let mut pair = build_codec(CodecConfig::default(), 9).unwrap();
            let mut opt = Optimizer::adam(1e-3);
            train_codec(&mut pair, &data, 3, &mut opt, false).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ste_mode_changes_forward_only() {
        let data = vec![Tensor::full(Shape::new(1, 3, 32, 32), 0.25); 1];
        let mut a = build_codec(CodecConfig::default(), 3).unwrap();
        let mut b = build_codec(CodecConfig::default(), 3).unwrap();
        let mut oa = Optimizer::adam(1e-3);
        let mut ob = Optimizer::adam(1e-3);
        train_codec(&mut a, &data, 2, &mut oa, false).unwrap();
        train_codec(&mut b, &data, 2, &mut ob, true).unwrap();
        // same parameter structure either way
        let pa = a.named_params();
        let pb = b.named_params();
        assert_eq!(pa.len(), pb.len());
        for ((na, ta), (nb, tb)) in pa.iter().zip(&pb) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
        }
    }
}
