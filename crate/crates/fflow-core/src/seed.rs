//! Deterministic seed derivation.
//!
//! A master seed fans out into per-purpose RNG streams through a stable
//! FNV-1a hash over `(master, purpose, index)`. Changing the seed of one
//! stage therefore never perturbs another, and derived streams are stable
//! across platforms and crate versions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(hash: u64, bytes: &[u8]) -> u64 {
    let mut h = hash;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from `(master, purpose, index)`.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, purpose.as_bytes());
    fnv1a(h, &index.to_le_bytes())
}

/// RNG stream for a derived seed.
pub fn rng(master: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, index))
}
