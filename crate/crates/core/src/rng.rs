//! Seed derivation. Every stochastic step draws from its own ChaCha stream keyed by
//! a user seed plus a stream id, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, id: u64) -> Rng {
    Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ id))
}

/// Salts that separate the independent consumers of a shared seed.
pub(crate) mod salt {
    pub const BLOCK_B0: u64 = 0x0b0;
    pub const TRAIN: u64 = 0x7a1;
    pub const ALTER: u64 = 0xa17;
    pub const PHANTOM: u64 = 0xf4a;
    pub const HOLDOUT: u64 = 0x401d;
}

pub fn salted(seed: u64, salt: u64, id: u64) -> Rng {
    stream(splitmix64(seed ^ salt.rotate_left(32)), id)
}
