//! Seeded random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha stream keyed by the
//! run seed. ChaCha is counter based, so independent sub-streams are obtained
//! by selecting a stream id instead of re-seeding, and two components that
//! share a stream id see identical draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream ids reserved for the separate consumers of one seed.
pub mod streams {
    pub const SIMULATION: u64 = 0;
    pub const COUPLING: u64 = 1;
    pub const INITIAL_STATE: u64 = 2;
    pub const FROZEN_REPLAY: u64 = 3;
}

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for the `index`-th replication derived from a base seed.
///
/// SplitMix64 finalizer; distinct indices give well separated keys.
pub fn replication_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
