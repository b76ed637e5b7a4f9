//! Deterministic, platform-independent randomness keyed by strings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix a base seed with a sequence of labels. Labels are length-prefixed so
/// `["ab", "c"]` and `["a", "bc"]` differ.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut h = splitmix64(seed);
    for label in labels {
        let mut buf = (label.len() as u64).to_le_bytes().to_vec();
        buf.extend_from_slice(label.as_bytes());
        h = splitmix64(h ^ fnv1a(&buf));
    }
    h
}

/// Uniform draw in `[0, 1)` determined by `seed` and `labels`.
pub fn unit_draw(seed: u64, labels: &[&str]) -> f64 {
    (derive_seed(seed, labels) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn rng_for(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}
