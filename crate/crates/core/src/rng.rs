//! Per-item random streams.
//!
//! Every random choice is drawn from a ChaCha stream keyed by
//! `sha256(global_seed || item_id)`, so results do not depend on processing
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type ItemRng = ChaCha8Rng;

pub fn item_rng(global_seed: u64, item_id: &str) -> ItemRng {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(item_id.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
