//! Seed derivation. Every random stream is keyed by the values that
//! identify it, so it does not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a key tuple.
pub fn derive(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |h, &p| splitmix64(h ^ splitmix64(p)))
}

pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parts))
}

/// Stream tags keep unrelated streams with equal numeric keys apart.
pub mod stream {
    pub const SAMPLER: u64 = 0x5341_4D50;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const INIT: u64 = 0x494E_4954;
    pub const FOLDS: u64 = 0x464F_4C44;
    pub const ACTOR: u64 = 0x4143_544F;
    pub const CLIP: u64 = 0x434C_4950;
    pub const FOLD_RUN: u64 = 0x5255_4E53;
}
