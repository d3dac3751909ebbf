//! Deterministic seed derivation.
//!
//! Experiments take a single master seed; every parallel task derives its
//! own seed by hashing a textual task key. The hash is a fixed FNV-1a so
//! results do not depend on the standard library's hasher or on thread
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from a master seed and a task key.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + key.len());
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(key.as_bytes());
    fnv1a(&buf)
}

/// The RNG used throughout the crate, constructed from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
