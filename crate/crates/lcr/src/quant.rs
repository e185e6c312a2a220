//! Affine quantization of latent tensors onto n-bit integer symbols.
//!
//! A tensor is mapped through `(2^n - 1) * (x - min) / (max - min)` with
//! round-half-to-even, and recovered through `s / (2^n - 1) * (max - min) +
//! min`. The stored 32-bit `min`/`max` are used verbatim on both sides so
//! encoder and decoder agree bit-exactly.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Range and bit length governing one tensor's quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub min: f32,
    pub max: f32,
    pub bits: u8,
}

impl QuantParams {
    pub fn new(min: f32, max: f32, bits: u8) -> Result<Self> {
        let p = QuantParams { min, max, bits };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.bits) {
            return Err(Error::Config(format!(
                "bit length must be in [2, 8], got {}",
                self.bits
            )));
        }
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Numeric("quant range must be finite".into()));
        }
        if self.min > self.max {
            return Err(Error::Config(format!(
                "quant range inverted: min {} > max {}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    /// Largest symbol value, 2^bits - 1.
    pub fn max_symbol(&self) -> u8 {
        ((1u16 << self.bits) - 1) as u8
    }

    /// A constant tensor quantizes to all zeros and reconstructs to `min`.
    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }
}

/// Quantized tensor: symbols plus the params needed to reconstruct it.
#[derive(Debug, Clone, PartialEq)]
pub struct IntLatent {
    pub shape: Shape,
    pub symbols: Vec<u8>,
    pub params: QuantParams,
}

impl IntLatent {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.symbols.len() != self.shape.numel() {
            return Err(Error::Shape(format!(
                "{} symbols for shape {}",
                self.symbols.len(),
                self.shape
            )));
        }
        let cap = self.params.max_symbol();
        if let Some(pos) = self.symbols.iter().position(|s| *s > cap) {
            return Err(Error::Corrupt(format!(
                "symbol {} at index {pos} exceeds max {cap} for {} bits",
                self.symbols[pos], self.params.bits
            )));
        }
        Ok(())
    }
}

/// Per-tensor range fit: min and max of the values at hand.
pub fn fit_params(latent: &Tensor, bits: u8) -> Result<QuantParams> {
    if latent.numel() == 0 {
        return Err(Error::Validation("cannot fit quant params to an empty tensor".into()));
    }
    latent.check_finite("fit_params")?;
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for v in latent.data() {
        min = min.min(*v);
        max = max.max(*v);
    }
    QuantParams::new(min, max, bits)
}

/// Range fit over a calibration set instead of a single tensor.
pub fn fit_params_global(tensors: &[&Tensor], bits: u8) -> Result<QuantParams> {
    if tensors.is_empty() || tensors.iter().all(|t| t.numel() == 0) {
        return Err(Error::Validation("empty calibration set".into()));
    }
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for t in tensors {
        t.check_finite("fit_params_global")?;
        for v in t.data() {
            min = min.min(*v);
            max = max.max(*v);
        }
    }
    QuantParams::new(min, max, bits)
}

/// Quantizes with round-half-to-even; out-of-range inputs clamp to the
/// symbol range.
pub fn float2int(latent: &Tensor, params: &QuantParams) -> Result<IntLatent> {
    params.validate()?;
    let levels = params.max_symbol() as f32;
    let symbols = if params.is_degenerate() {
        vec![0u8; latent.numel()]
    } else {
        let span = params.max - params.min;
        latent
            .data()
            .iter()
            .map(|x| {
                let t = levels * ((x - params.min) / span);
                t.round_ties_even().clamp(0.0, levels) as u8
            })
            .collect()
    };
    Ok(IntLatent {
        shape: latent.shape(),
        symbols,
        params: *params,
    })
}

/// Reconstructs real values from symbols; results lie in [min, max].
pub fn int2float(q: &IntLatent) -> Result<Tensor> {
    q.validate()?;
    let p = q.params;
    let data = if p.is_degenerate() {
        vec![p.min; q.symbols.len()]
    } else {
        let levels = p.max_symbol() as f32;
        let span = p.max - p.min;
        q.symbols
            .iter()
            .map(|s| ((*s as f32 / levels) * span + p.min).clamp(p.min, p.max))
            .collect()
    };
    Tensor::from_vec(q.shape, data)
}

/// Quantize-dequantize in one go; the forward value used for straight-through
/// training and for feeding the segmentation network.
pub fn quantize_dequantize(latent: &Tensor, bits: u8) -> Result<(Tensor, QuantParams)> {
    let params = fit_params(latent, bits)?;
    let q = float2int(latent, &params)?;
    Ok((int2float(&q)?, params))
}
