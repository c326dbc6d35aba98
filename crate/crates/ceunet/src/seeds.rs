//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream keyed by
//! a seed derived from (base seed, purpose tag, indices). Identical inputs
//! give identical streams on every platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed, a purpose tag and an index.
pub fn derive(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(base);
    for &b in tag.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}

/// Sub-net `j` trains from this seed; `j = 0` reuses the base seed so a
/// one-cluster ensemble replays a standalone run bit for bit.
pub fn subnet_seed(base: u64, j: usize) -> u64 {
    if j == 0 {
        base
    } else {
        derive(base, "subnet", j as u64)
    }
}

/// Seeded ChaCha stream.
pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
