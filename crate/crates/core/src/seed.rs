//! Named random sub-streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent generator for `(seed, name, index)`; changing any part gives
/// an unrelated stream.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// A `u64` drawn from [`substream`], for APIs that take integer seeds.
pub fn derive(seed: u64, name: &str, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, name, index).next_u64()
}
