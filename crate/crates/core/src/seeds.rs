//! Independent, labeled RNG streams derived from one master seed, so
//! toggling one pipeline stage cannot perturb the draws of another.

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    <ChaCha8Rng as rand::SeedableRng>::from_seed(seed)
}
