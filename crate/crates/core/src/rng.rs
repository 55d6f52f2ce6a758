//! Seed derivation for independent, order-free random streams.
//!
//! Every stochastic draw in the simulator is keyed by a tuple of tags
//! (master seed, client, round, codeword, attempt, ...), so results do not
//! depend on scheduling or the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, kept distinct so unrelated consumers never share a stream.
pub mod tag {
    pub const INIT: u64 = 0x494e_4954;
    pub const DATA: u64 = 0x4441_5441;
    pub const PARTITION: u64 = 0x5041_5254;
    pub const UPLINK: u64 = 0x5550_4c4b;
    pub const PARITY: u64 = 0x5041_5249;
    pub const SWEEP: u64 = 0x5357_4550;
    pub const BOUND: u64 = 0x424f_554e;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with an ordered list of tags into a single 64-bit key.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Deterministic RNG for the stream identified by `(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
