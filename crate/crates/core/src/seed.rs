//! Stable seed derivation. Everything random in the crate draws from a
//! ChaCha stream seeded through these helpers, never from ambient entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a over bytes; stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive(base: u64, part: u64) -> u64 {
    splitmix64(base ^ splitmix64(part))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for one mention, independent of processing order.
pub fn mention_rng(seed: u64, doc_id: &str, position: usize) -> ChaCha8Rng {
    rng(derive(derive(seed, fnv1a(doc_id.as_bytes())), position as u64))
}
