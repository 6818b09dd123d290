//! Seed derivation. Every random stream in the simulator is keyed by a root
//! seed plus a path of labels, so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Deterministic 64-bit child seed of `seed` along `path`.
pub fn derive_seed(seed: u64, path: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for part in path {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

pub fn rng_for(seed: u64, path: &[&str]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, path))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Hex SHA-256 of arbitrary bytes, used for config and artifact hashes.
pub fn content_hash(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}
