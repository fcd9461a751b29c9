//! Named, seeded random streams.
//!
//! Every source of randomness in a run is a ChaCha8 stream keyed by the run
//! seed and a `(purpose, index)` pair, so weight init, data shuffling,
//! channel noise and generator noise never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Shuffle = 1,
    WeightInit = 2,
    ChannelNoise = 3,
    Fading = 4,
    SnrSchedule = 5,
    GeneratorNoise = 6,
    EvalChannel = 7,
    EvalFading = 8,
    Probe = 9,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | (index & ((1 << 40) - 1)));
    rng
}

/// Standard normal draw; always sampled in f64 so f32 and f64 runs see the
/// same noise sequence.
pub fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}
