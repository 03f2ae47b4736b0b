//! Deterministic seed and RNG derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    out
}

/// Child seed for `label` (a stage name, a doc id) under `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let d = digest(seed, label);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Independent RNG stream for `label` under `seed`.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, label))
}
