//! Counter-keyed random streams.
//!
//! Every stochastic sample is a pure function of `(seed, machine, round, step)`:
//! the four words form the 256-bit ChaCha key, so no state is shared between
//! workers and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies one sample `z_t^i` with `t = round * K + step`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleKey {
    pub seed: u64,
    pub machine: u64,
    pub round: u64,
    pub step: u64,
}

impl SampleKey {
    pub fn new(seed: u64, machine: usize, round: u64, step: u64) -> Self {
        SampleKey {
            seed,
            machine: machine as u64,
            round,
            step,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        keyed_rng([self.seed, self.machine, self.round, self.step])
    }
}

/// Streams outside the sampling path (problem generation, partitioning) use
/// a distinct domain tag in the machine slot so they never collide with
/// sample keys.
pub fn domain_rng(seed: u64, domain: &str) -> ChaCha8Rng {
    let tag = domain
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    keyed_rng([seed, u64::MAX, tag, u64::MAX])
}

fn keyed_rng(words: [u64; 4]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
