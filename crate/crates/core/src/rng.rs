//! Deterministic random streams.
//!
//! Every stochastic operation draws from a ChaCha8 generator keyed by the run
//! seed and a stream id derived from structural indices (epoch, record, read),
//! never from scheduling order, so parallel and sequential runs agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same seed apart.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const CD: u64 = 2;
    pub const ANNEAL: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const DATA: u64 = 6;
    pub const CORRUPT: u64 = 7;
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the stream identified by `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    let id = path
        .iter()
        .fold(0x9e37_79b9_7f4a_7c15_u64, |acc, &p| mix(acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Fresh 64-bit seed drawn from an existing generator.
pub fn child_seed(rng: &mut Rng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}
