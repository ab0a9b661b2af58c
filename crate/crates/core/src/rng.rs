//! Deterministic random streams.
//!
//! Every stochastic step draws from its own ChaCha stream whose seed is a
//! mix of the run seed and the coordinates of the step (patient, side, fold,
//! epoch, ...). Results therefore do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of coordinates into a new seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, parts: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags keep unrelated consumers of the same seed apart.
pub mod tag {
    pub const PHANTOM: u64 = 0x5048_414e;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const AUGMENT: u64 = 0x4155_474d;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
}
