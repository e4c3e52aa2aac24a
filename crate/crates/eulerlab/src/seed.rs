//! Seed splitting. Every random stream of a run is `derive(master, stream)`,
//! where `stream` identifies the consumer; streams never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the library and the CLI.
pub mod streams {
    /// Ensemble member `i` uses `ENSEMBLE_MEMBER + i`.
    pub const ENSEMBLE_MEMBER: u64 = 1 << 32;
    pub const RANDOM_REYNOLDS: u64 = 2 << 32;
    pub const BATTERY: u64 = 3 << 32;
    /// Path `i` of the transport SDE uses `SDE_PATH + i`.
    pub const SDE_PATH: u64 = 4 << 32;
    pub const TEST_FIELDS: u64 = 5 << 32;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(master) ^ stream)`.
pub fn derive(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ stream)
}

pub fn rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream))
}
