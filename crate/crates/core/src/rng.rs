//! Seed handling.
//!
//! A run has one 64-bit root seed. Every independent task (a replication,
//! a rollout path, a Monte Carlo draw block) gets its own ChaCha8 stream:
//! the generator is keyed by the root seed and the 64-bit stream id selects
//! the ChaCha nonce, so streams never overlap and results do not depend on
//! how tasks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for stream `stream` under `root`.
pub fn stream(root: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng
}

/// Mixes a child id into a root seed, for nested task hierarchies
/// (e.g. replication r, then path p inside it).
pub fn child_seed(root: u64, id: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = root ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
