//! Seed plumbing. Every random stream in the crate is derived from an explicit `u64` seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(stream, index)` under `base`. Distinct inputs give decorrelated seeds.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

/// Named streams so that unrelated consumers of one run seed never share randomness.
pub mod stream {
    pub const SIMULATION: u64 = 1;
    pub const PROPOSAL: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SNAPSHOT: u64 = 5;
    pub const LORA: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const MH: u64 = 8;
    pub const OBSERVATION: u64 = 9;
}
