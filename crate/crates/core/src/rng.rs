//! Seeded randomness.
//!
//! Every stochastic component takes an explicit `u64` seed. Sub-seeds for the
//! different roles inside one experiment are derived by hashing labels into the
//! base seed so that changing one role never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a sub-seed from a base seed and a sequence of labels.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    // FNV-1a over the labels, separated by a byte that cannot occur in UTF-8.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for label in labels {
        for b in label.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    splitmix64(base ^ splitmix64(h))
}

/// Derive a sub-seed from a base seed and an index (episode, probe batch, ...).
pub fn derive_indexed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
