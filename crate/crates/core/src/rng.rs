//! Seeded, position-addressable random streams.
//!
//! Every simulated round consumes exactly [`WORDS_PER_ROUND`] 32-bit words of
//! a ChaCha8 keystream, so round `r` of a stream can be reached by seeking
//! rather than replaying rounds `0..r`. That makes the draws for a round a
//! pure function of `(seed, stream, round)`, independent of how the rounds
//! are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Four u64 draws per round: basis, Alice outcome, Bob outcome, detection.
pub const DRAWS_PER_ROUND: usize = 4;
pub const WORDS_PER_ROUND: u128 = 2 * DRAWS_PER_ROUND as u128;

/// Stream reserved for tomography counts. No finite phase has these bits.
pub const TOMOGRAPHY_STREAM: u64 = u64::MAX;

/// Stream id for sensing rounds at phase `phi`.
pub fn phase_stream(phi: f64) -> u64 {
    // Normalize -0.0 so it shares a stream with 0.0.
    if phi == 0.0 {
        0
    } else {
        phi.to_bits()
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in [0, 1) with 53 bits of resolution.
#[inline]
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Iterator over per-round uniform draws for one stream.
pub struct RoundStream {
    rng: ChaCha8Rng,
    next_round: u64,
}

impl RoundStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { rng: stream_rng(seed, stream), next_round: 0 }
    }

    /// Starts the stream at `round` without generating earlier rounds.
    pub fn at(seed: u64, stream: u64, round: u64) -> Self {
        let mut rng = stream_rng(seed, stream);
        rng.set_word_pos(round as u128 * WORDS_PER_ROUND);
        Self { rng, next_round: round }
    }

    pub fn next_round(&mut self) -> (u64, [f64; DRAWS_PER_ROUND]) {
        let mut u = [0.0; DRAWS_PER_ROUND];
        for slot in &mut u {
            *slot = unit_f64(self.rng.next_u64());
        }
        let id = self.next_round;
        self.next_round += 1;
        (id, u)
    }
}
