//! The `.lcr` container: a bit-exact serialization of one compressed image.
//!
//! Layout (all integers little-endian, reals IEEE-754 32-bit):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LCR1"
//! 4       1     version (1)
//! 5       4     original height (u32)
//! 9       4     original width (u32)
//! 13      1     latent channels (u8)
//! 14      1     digest units d (u8)
//! 15      1     bit length n (u8)
//! 16      4     quant min (f32)
//! 20      4     quant max (f32)
//! 24      4     symbol count (u32)
//! 28      ...   dictionary (u16 alphabet size + per-symbol value, length)
//! ...     4     payload bit count (u32)
//! ...     ...   payload bytes, MSB-first, zero padding
//! ```
//!
//! The symbol count must equal `latent_channels * (H/s) * (W/s)` with
//! `s = 4 * 2^d`, the spatial factor of the default codec geometry.

use std::path::Path;

use crate::codec::CodecPair;
use crate::error::{Error, Result};
use crate::huffman::{decode, encode, BitPayload, HuffmanDict};
use crate::image::{read_ppm, write_ppm, RgbImage};
use crate::quant::{float2int, int2float, IntLatent, QuantParams};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"LCR1";
pub const VERSION: u8 = 1;
/// Fixed bytes before the dictionary.
pub const FIXED_HEADER_LEN: usize = 28;

/// Spatial downsampling factor of a codec with `d` digest units
/// (stem stride 4, digest stride 2 each).
pub fn spatial_factor(digest_units: u8) -> usize {
    4usize << digest_units
}

/// Parsed form of one `.lcr` file.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlob {
    pub orig_height: u32,
    pub orig_width: u32,
    pub latent_channels: u8,
    pub digest_units: u8,
    pub bits: u8,
    pub quant_min: f32,
    pub quant_max: f32,
    pub symbol_count: u32,
    pub dict: HuffmanDict,
    pub payload: BitPayload,
}

impl CompressedBlob {
    /// Builds a blob from a quantized latent (entropy-coding it on the way).
    pub fn from_latent(
        orig_height: u32,
        orig_width: u32,
        digest_units: u8,
        q: &IntLatent,
    ) -> Result<Self> {
        q.validate()?;
        let dict = HuffmanDict::build(&q.symbols)?;
        let payload = encode(&q.symbols, &dict)?;
        let blob = CompressedBlob {
            orig_height,
            orig_width,
            latent_channels: q.shape.c as u8,
            digest_units,
            bits: q.params.bits,
            quant_min: q.params.min,
            quant_max: q.params.max,
            symbol_count: q.symbols.len() as u32,
            dict,
            payload,
        };
        blob.check_consistent()?;
        Ok(blob)
    }

    /// Latent spatial size implied by the header.
    pub fn latent_hw(&self) -> (usize, usize) {
        let s = spatial_factor(self.digest_units);
        (
            self.orig_height as usize / s,
            self.orig_width as usize / s,
        )
    }

    /// Decodes the payload back into the quantized latent.
    pub fn to_latent(&self) -> Result<IntLatent> {
        let symbols = decode(&self.payload, &self.dict, self.symbol_count as usize)?;
        let (lh, lw) = self.latent_hw();
        let latent = IntLatent {
            shape: Shape::new(1, self.latent_channels as usize, lh, lw),
            symbols,
            params: QuantParams::new(self.quant_min, self.quant_max, self.bits)?,
        };
        latent.validate()?;
        Ok(latent)
    }

    /// Reconstructed real-valued latent, as the cloud side sees it.
    pub fn dequantized_latent(&self) -> Result<Tensor> {
        int2float(&self.to_latent()?)
    }

    fn check_consistent(&self) -> Result<()> {
        if self.orig_height == 0 || self.orig_width == 0 {
            return Err(Error::Inconsistent("zero image dimensions".into()));
        }
        if !(1..=3).contains(&self.digest_units) {
            return Err(Error::Inconsistent(format!(
                "digest units {} outside [1, 3]",
                self.digest_units
            )));
        }
        QuantParams::new(self.quant_min, self.quant_max, self.bits).map_err(|e| {
            Error::Inconsistent(format!("quant params: {e}"))
        })?;
        let s = spatial_factor(self.digest_units) as u32;
        if self.orig_height % s != 0 || self.orig_width % s != 0 {
            return Err(Error::Inconsistent(format!(
                "image {}x{} not divisible by spatial factor {s}",
                self.orig_height, self.orig_width
            )));
        }
        let expect =
            self.latent_channels as u64 * (self.orig_height / s) as u64 * (self.orig_width / s) as u64;
        if self.symbol_count as u64 != expect {
            return Err(Error::Inconsistent(format!(
                "symbol count {} but geometry implies {expect}",
                self.symbol_count
            )));
        }
        let max_sym = ((1u16 << self.bits) - 1) as u8;
        if let Some((sym, _)) = self.dict.entries().iter().find(|(sym, _)| *sym > max_sym) {
            return Err(Error::Corrupt(format!(
                "dictionary symbol {sym} exceeds max {max_sym} for {} bits",
                self.bits
            )));
        }
        if self.payload.bit_count > self.symbol_count as u64 * crate::huffman::MAX_CODE_LEN as u64 {
            return Err(Error::Inconsistent(format!(
                "payload of {} bits cannot encode {} symbols",
                self.payload.bit_count, self.symbol_count
            )));
        }
        self.payload.validate()?;
        Ok(())
    }

    pub fn serialize(&self) -> Vec<u8> {
        let dict_bytes = self.dict.to_bytes();
        let mut out =
            Vec::with_capacity(FIXED_HEADER_LEN + dict_bytes.len() + 4 + self.payload.bytes.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.orig_height.to_le_bytes());
        out.extend_from_slice(&self.orig_width.to_le_bytes());
        out.push(self.latent_channels);
        out.push(self.digest_units);
        out.push(self.bits);
        out.extend_from_slice(&self.quant_min.to_le_bytes());
        out.extend_from_slice(&self.quant_max.to_le_bytes());
        out.extend_from_slice(&self.symbol_count.to_le_bytes());
        out.extend_from_slice(&dict_bytes);
        out.extend_from_slice(&(self.payload.bit_count as u32).to_le_bytes());
        out.extend_from_slice(&self.payload.bytes);
        out
    }

    /// Parses and fully validates container bytes.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("missing magic".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::BadMagic(format!(
                "expected {:?}, found {:?}",
                MAGIC,
                &bytes[0..4]
            )));
        }
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(Error::Truncated(format!(
                "fixed header needs {FIXED_HEADER_LEN} bytes, {} available",
                bytes.len()
            )));
        }
        let version = bytes[4];
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
        let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
        let orig_height = u32_at(5);
        let orig_width = u32_at(9);
        let latent_channels = bytes[13];
        let digest_units = bytes[14];
        let bits = bytes[15];
        let quant_min = f32_at(16);
        let quant_max = f32_at(20);
        let symbol_count = u32_at(24);

        let (dict, dict_len) = HuffmanDict::from_bytes(&bytes[FIXED_HEADER_LEN..])?;
        let mut off = FIXED_HEADER_LEN + dict_len;
        if bytes.len() < off + 4 {
            return Err(Error::Truncated("missing payload bit count".into()));
        }
        let bit_count = u32_at(off) as u64;
        off += 4;
        let payload_len = (bit_count as usize).div_ceil(8);
        if bytes.len() < off + payload_len {
            return Err(Error::Truncated(format!(
                "payload needs {payload_len} bytes, {} available",
                bytes.len() - off
            )));
        }
        if bytes.len() > off + payload_len {
            return Err(Error::Inconsistent(format!(
                "{} trailing bytes after payload",
                bytes.len() - off - payload_len
            )));
        }
        let payload = BitPayload {
            bit_count,
            bytes: bytes[off..off + payload_len].to_vec(),
        };
        let blob = CompressedBlob {
            orig_height,
            orig_width,
            latent_channels,
            digest_units,
            bits,
            quant_min,
            quant_max,
            symbol_count,
            dict,
            payload,
        };
        blob.check_consistent()?;
        Ok(blob)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }
}

/// Compression factor against a 24-bit-per-pixel RGB original.
pub fn compression_factor(height: usize, width: usize, file_size_bytes: usize) -> Result<f64> {
    if file_size_bytes == 0 {
        return Err(Error::Validation("file size is zero".into()));
    }
    Ok((3 * height * width) as f64 / file_size_bytes as f64)
}

/// Compression factor of the raw (pre-entropy-coding) quantized latent:
/// 24 bits/pixel over `latent_channels * n / s^2` bits/pixel.
pub fn raw_compression_factor(latent_channels: usize, bits: u8, digest_units: u8) -> f64 {
    let s = spatial_factor(digest_units);
    24.0 * (s * s) as f64 / (latent_channels as f64 * bits as f64)
}

/// Quantizes a latent tensor and packs it into a blob.
pub fn pack_latent(
    latent: &Tensor,
    bits: u8,
    digest_units: u8,
    orig_height: usize,
    orig_width: usize,
) -> Result<CompressedBlob> {
    let params = crate::quant::fit_params(latent, bits)?;
    let q = float2int(latent, &params)?;
    CompressedBlob::from_latent(orig_height as u32, orig_width as u32, digest_units, &q)
}

fn check_container_geometry(pair: &CodecPair) -> Result<()> {
    let c = &pair.config;
    if c.stem_stride != 4 || c.digest_stride != 2 {
        return Err(Error::Config(format!(
            "container geometry assumes stem stride 4 and digest stride 2, codec has {} / {}",
            c.stem_stride, c.digest_stride
        )));
    }
    Ok(())
}

/// Full encode chain: compressor forward, quantize, entropy-code, pack.
pub fn compress_image(pair: &CodecPair, image: &Tensor, bits: u8) -> Result<CompressedBlob> {
    check_container_geometry(pair)?;
    let s = image.shape();
    let latent = pair.compress_forward(image)?;
    pack_latent(&latent, bits, pair.config.digest_units, s.h, s.w)
}

/// Full decode chain: parse-validated blob, entropy-decode, dequantize,
/// decompressor forward.
pub fn decompress_blob(pair: &CodecPair, blob: &CompressedBlob) -> Result<Tensor> {
    check_container_geometry(pair)?;
    if blob.digest_units != pair.config.digest_units
        || blob.latent_channels as usize != pair.config.latent_channels
    {
        return Err(Error::Config(format!(
            "blob was written for d={} with {} latent channels, codec has d={} with {}",
            blob.digest_units,
            blob.latent_channels,
            pair.config.digest_units,
            pair.config.latent_channels
        )));
    }
    pair.decompress_forward(&blob.dequantized_latent()?)
}

/// Compresses a PPM image to an `.lcr` file.
pub fn compress_file(image_path: &Path, pair: &CodecPair, bits: u8, out_path: &Path) -> Result<()> {
    let image = read_ppm(image_path)?.to_tensor();
    let blob = compress_image(pair, &image, bits)?;
    blob.write_file(out_path)
}

/// Decompresses an `.lcr` file to an 8-bit PPM image.
pub fn decompress_file(blob_path: &Path, pair: &CodecPair, out_path: &Path) -> Result<()> {
    let blob = CompressedBlob::read_file(blob_path)?;
    let recon = decompress_blob(pair, &blob)?;
    write_ppm(out_path, &RgbImage::from_tensor(&recon)?)
}
