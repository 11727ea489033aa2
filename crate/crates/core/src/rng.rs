//! Seeded random streams.
//!
//! Every stochastic step takes its generator from here so that runs are
//! reproducible. Per-record streams are keyed by `(seed, epoch, index)` rather
//! than drawn from one shared sequence, which keeps augmentation and dropout
//! independent of processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of key parts into a new seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for one record within one epoch.
pub fn keyed(seed: u64, epoch: u64, index: u64) -> Rng {
    seeded(derive_seed(seed, &[epoch, index]))
}
