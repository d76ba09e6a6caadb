use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Counter-based stream generator used for every random draw in the crate.
pub type SeededRng = ChaCha8Rng;

/// Generator for `seed`, on an independent `stream` so that distinct
/// consumers (weights, noise, frequencies) never share draws.
pub fn seeded_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform Glorot weights in `±sqrt(6 / (fan_in + fan_out))`, shaped
/// `[fan_in, fan_out]` for row-vector inputs.
pub fn xavier_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}
