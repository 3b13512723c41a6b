//! Named random sub-streams derived from one run seed.
//!
//! Each stage draws from its own ChaCha stream (`"generation"`, `"shuffle"`,
//! `"init"`, ...) so a stage can be rerun in isolation without replaying the
//! draws of the stages before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GENERATION: &str = "generation";
pub const SHUFFLE: &str = "shuffle";
pub const INIT: &str = "init";

/// FNV-1a over the stream name.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}
