//! Deterministic fan-out of one root seed into named substreams.
//!
//! Every source of randomness (splitting, weight init, shuffling, baseline
//! noise) draws its seed through [`seed_stream`], so commands stay
//! independently reproducible: changing how one consumer draws does not
//! shift any other stream.

use sha2::{Digest, Sha256};

/// Hashes `(root, name)` into a stream seed.
pub fn seed_stream(root: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
