//! Binary PPM (P6) and PGM (P5) rasters.
//!
//! PPM carries RGB images, PGM carries segmentation masks with class
//! indices as gray levels. Maxval is fixed at 255. PNG support is behind
//! the `png` feature.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 8-bit RGB raster, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// 8-bit single-channel raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width * height {
            return Err(Error::Validation(format!(
                "{} bytes for a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    /// (1, 3, H, W) tensor scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let shape = Shape::new(1, 3, self.height, self.width);
        let mut data = vec![0.0f32; shape.numel()];
        for y in 0..self.height {
            for x in 0..self.width {
                let px = 3 * (y * self.width + x);
                for c in 0..3 {
                    data[shape.index(0, c, y, x)] = self.pixels[px + c] as f32 / 255.0;
                }
            }
        }
        Tensor::from_vec(shape, data).expect("u8 pixels are finite")
    }

    /// Quantizes a (1, 3, H, W) tensor in [0, 1] back to 8-bit RGB.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::Shape(format!("expected (1,3,H,W) tensor, got {s}")));
        }
        let mut pixels = vec![0u8; 3 * s.h * s.w];
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..3 {
                    let v = t.at(0, c, y, x).clamp(0.0, 1.0);
                    pixels[3 * (y * s.w + x) + c] = (v * 255.0).round() as u8;
                }
            }
        }
        RgbImage::new(s.w, s.h, pixels)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Validation(format!(
                "{} bytes for a {width}x{height} gray image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }
}

/// Reads the PNM header: magic, dimensions, maxval, then one whitespace
/// byte before the binary samples. `#` comments are allowed between tokens.
fn parse_pnm_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 2 || &bytes[0..2] != magic.as_bytes() {
        return Err(Error::Validation(format!("not a {magic} file")));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Validation(format!("{magic} header ended early")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Validation(format!("{magic} header field too large")))?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Validation(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Validation(format!(
            "{magic} header not terminated by whitespace"
        )));
    }
    pos += 1;
    Ok((width, height, &bytes[pos..]))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path)?;
    let (width, height, data) = parse_pnm_header(&bytes, "P6")?;
    let need = 3 * width * height;
    if data.len() < need {
        return Err(Error::Validation(format!(
            "P6 data truncated: {} of {need} bytes",
            data.len()
        )));
    }
    RgbImage::new(width, height, data[..need].to_vec())
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    let (width, height, data) = parse_pnm_header(&bytes, "P5")?;
    let need = width * height;
    if data.len() < need {
        return Err(Error::Validation(format!(
            "P5 data truncated: {} of {need} bytes",
            data.len()
        )));
    }
    GrayImage::new(width, height, data[..need].to_vec())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(feature = "png")]
pub fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::Validation(format!("png read: {e}")))?
        .to_rgb8();
    RgbImage::new(
        img.width() as usize,
        img.height() as usize,
        img.into_raw(),
    )
}

#[cfg(feature = "png")]
pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .ok_or_else(|| Error::Validation("pixel buffer size mismatch".into()))?;
    buf.save(path)
        .map_err(|e| Error::Validation(format!("png write: {e}")))
}
