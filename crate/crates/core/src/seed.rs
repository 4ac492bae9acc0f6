//! Seed derivation. Every random draw in the toolkit comes from a ChaCha
//! stream keyed by a mixed 64-bit seed, so results never depend on thread
//! scheduling or iteration order of hash maps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a base seed with an ordered list of stream labels.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base ^ 0x9e37_79b9_7f4a_7c15), |acc, &p| {
        mix64(acc ^ mix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}

pub fn rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}

/// Stable 64-bit key for a string (first eight bytes of its SHA-256).
pub fn key_of(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = rng(17, &[1, 2]).random();
        let b: u64 = rng(17, &[1, 2]).random();
        let c: u64 = rng(17, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(key_of("utt-1"), key_of("utt-1"));
        assert_ne!(key_of("utt-1"), key_of("utt-2"));
    }
}
