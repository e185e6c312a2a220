//! Seeded parameter initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::data::{Shape, Tensor};

/// Deterministic RNG used everywhere weights or data are sampled.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Kaiming-uniform initialization with fan-in scaling:
/// values drawn from U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform(shape: Shape, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let data = (0..shape.numel())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data).expect("bounded samples are finite")
}
