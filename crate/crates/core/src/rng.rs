//! Seeded RNG streams.
//!
//! One master seed feeds every run. Each mechanism draws from its own
//! ChaCha stream so that toggling one mechanism (say, switching creation
//! probability to 1 so no Bernoulli draws happen) leaves the sample paths of
//! the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams derived from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Movement = 1,
    Termination = 2,
    Creation = 3,
    CacheTieBreak = 4,
    Placement = 5,
    Lineage = 6,
    Gossip = 7,
    Topology = 8,
    Duplication = 9,
    Data = 10,
}

/// Deterministic generator for `stream` under `master`.
pub fn stream(master: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Sub-seed for the `index`-th child of `master` (replications, sweep points, resamples).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
