//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Sub-streams (per
//! concept, per trial, per stage) are derived with [`derive_seed`] so that
//! parallel callers stay reproducible regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type LabRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a stream tag into a base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal(rng: &mut LabRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut LabRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| standard_normal(rng)).collect()
}
