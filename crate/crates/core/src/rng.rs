//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by a seed and a
//! stream id, so results never depend on call order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids for the pipeline steps that share one master seed.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const BALANCE: u64 = 2;
    pub const SYNTH: u64 = 3;
    pub const TSNE: u64 = 4;
    pub const AUTOENC: u64 = 5;
    pub const CV: u64 = 6;
    pub const CLASSIFIER: u64 = 7;
    pub const GRAD_CHECK: u64 = 8;
    /// Partition streams live above this offset.
    pub const PARTITION_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, stream_id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Stream for ensemble member `(components, randomization)`.
pub fn partition_stream(seed: u64, components: usize, randomization: usize) -> Rng {
    let id = streams::PARTITION_BASE + ((components as u64) << 16) + randomization as u64;
    stream(seed, id)
}

/// Mixes two words into a fresh seed (splitmix64 finaliser).
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
