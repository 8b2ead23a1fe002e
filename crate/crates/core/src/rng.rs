//! Seed derivation for independent random streams.
//!
//! Every consumer of randomness (particle init, velocity draws, weight init,
//! batch shuffling) gets its own stream keyed by a tuple of integers, so the
//! result never depends on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes. Part of the seed key so that e.g. the init stream and
/// the velocity stream of the same particle never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Velocity = 2,
    Weights = 3,
    Shuffle = 4,
    Subset = 5,
    Synth = 6,
    Dropout = 7,
    Target = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a run seed with a key path into a single 64-bit seed.
pub fn derive_seed(seed: u64, purpose: Purpose, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5EED_F00D_CAFE_BABE);
    h = splitmix64(h ^ purpose as u64);
    for &k in keys {
        h = splitmix64(h ^ k);
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, purpose, keys))
}
