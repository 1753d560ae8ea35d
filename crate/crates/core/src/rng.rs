//! Seed derivation. Every stochastic routine takes an explicit `u64` seed and
//! derives independent streams from it, so results never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with an index (splitmix64 finalizer).
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws an index from a discrete distribution given as non-negative weights
/// summing to (approximately) one.
pub fn sample_index<R: rand::Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Uniform draw in `[-scale, scale)`.
pub fn uniform<R: rand::Rng>(rng: &mut R, scale: f64) -> f64 {
    (rng.random::<f64>() * 2.0 - 1.0) * scale
}

pub fn normal<R: rand::Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
