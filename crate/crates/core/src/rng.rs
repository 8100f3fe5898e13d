//! Seed derivation. Every random draw in the crate comes from a ChaCha
//! stream keyed by `(seed, model id, purpose)`, so a run is reproducible
//! from its configuration alone and no generator is shared between calls.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Sgd = 0,
    Noise = 1,
    Sample = 2,
    Data = 3,
}

/// Mixes a run seed with a model id and purpose into a child seed.
pub fn derive_seed(seed: u64, id: u64, purpose: Purpose) -> u64 {
    // splitmix64 finalizer over the packed inputs
    let mut z = seed
        ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (purpose as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generator(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn child(seed: u64, id: u64, purpose: Purpose) -> ChaCha20Rng {
    generator(derive_seed(seed, id, purpose))
}
