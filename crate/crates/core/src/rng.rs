//! Seeding helpers. Every stochastic stage of a run (init, trial sampling,
//! evaluation, permutation tests) gets its own deterministic stream derived
//! from the experiment seed, so adding draws to one stage never shifts
//! another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for the independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Trials,
    Eval,
    Analysis,
    Permutation,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Trials => 2,
            Stream::Eval => 3,
            Stream::Analysis => 4,
            Stream::Permutation => 5,
        }
    }
}

/// RNG for one stage of the run identified by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Collapse several identifiers into one seed (splitmix64 over the parts).
pub fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
