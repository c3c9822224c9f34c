//! Seeded randomness.
//!
//! Every random draw in the engine comes from [`ChaCha8Rng`]. A run has one
//! master seed; each consumer (splitting, SMOTE, K-means, pheromone seeding,
//! policy initialisation, action sampling, minibatch shuffling) gets its own
//! ChaCha stream derived from that seed, so adding draws in one place never
//! shifts the sequence seen by another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Named random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Smote = 2,
    KMeans = 3,
    PheromoneSeed = 4,
    PolicyInit = 5,
    ActionSample = 6,
    Minibatch = 7,
    Sweep = 8,
    Synthetic = 9,
}

/// Generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed value identifying `stream` under `seed`, for consumers that need
/// a plain `u64` (e.g. to derive further per-item seeds).
pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    derive_seed(seed, stream as u64)
}

/// Plain generator for a raw seed (stream 0).
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a seed with a discriminator (splitmix64 finaliser).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
