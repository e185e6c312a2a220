//! Dense 4-D tensors and reverse-mode differentiation.
//!
//! Everything numeric in this crate flows through [`Tensor`]: images, feature
//! maps, latents, and network parameters. Shapes are always (N, C, H, W) with
//! row-major storage, 32-bit values, and no broadcasting. The [`tape`] module
//! records forward ops and replays them in reverse for gradients.

mod data;
pub mod init;
pub mod kernels;
pub mod tape;

pub use data::{Shape, Tensor};
pub use tape::{Tape, Var};
