//! Learned image compression with compressed-domain semantic segmentation.
//!
//! The crate trains a convolutional autoencoder codec, quantizes and
//! entropy-codes its latents into a bit-exact `.lcr` container, and runs
//! semantic segmentation either on images or directly on the
//! quantization-reconstructed latents, skipping the decompressor entirely.
//!
//! Module map:
//! - [`tensor`]: dense 4-D tensors, reverse-mode autodiff tape, seeded init
//! - [`optim`]: SGD / Adam with a step learning-rate schedule
//! - [`nn`]: conv layers and parameter binding plumbing
//! - [`codec`]: compressor / decompressor networks and their training loop
//! - [`quant`]: n-bit affine quantization (float2int / int2float)
//! - [`huffman`]: canonical Huffman coder over quantized symbols
//! - [`container`]: the `.lcr` on-disk format and compression-factor math
//! - [`seg`]: segmentation networks (image mode and latent mode)
//! - [`metrics`]: PSNR, SSIM, Dice
//! - [`compute`]: parameter and MAC accounting per pipeline stage
//! - [`image`]: binary PPM / PGM rasters
//! - [`data`]: synthetic scenes and patch extraction
//! - [`checkpoint`]: weight file save / load
//! - [`harness`]: experiment grids, baselines, CSV reports

pub mod checkpoint;
pub mod codec;
pub mod compute;
pub mod container;
pub mod data;
pub mod error;
pub mod harness;
pub mod huffman;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod quant;
pub mod seg;
pub mod tensor;

pub use error::{Error, Result};
