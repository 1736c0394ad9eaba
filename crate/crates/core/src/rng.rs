//! Seeded randomness with named sub-streams.
//!
//! Every stochastic stage draws from a ChaCha8 generator keyed by the single
//! root seed plus a fixed stream id, so stages are independently reproducible:
//! rerunning one stage with the same seed yields the same bytes no matter
//! which other stages ran before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed stream ids, one per stochastic stage.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    /// Edge removal for the input/target split.
    Split = 1,
    /// Rejection sampling of test-set negatives.
    TestNegatives = 2,
    /// Distractor construction for intermediate sets.
    Distractor = 3,
    /// Rejection sampling of context-sample negatives.
    ContextNegatives = 4,
    /// Model parameter initialisation.
    Init = 5,
    /// Epoch shuffling of training samples.
    Shuffle = 6,
    /// Dropout masks (mixed further per sample; see `mix`).
    Dropout = 7,
    /// Pair-local distractor resampling when a stored distractor pair is
    /// unusable.
    Resample = 8,
}

/// Generator for one named stream under a root seed.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// splitmix64 finaliser; folds counters into a seed so per-item generators
/// (e.g. dropout masks) are schedule-independent.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
