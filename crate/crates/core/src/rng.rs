//! Named deterministic random streams.
//!
//! Every consumer of randomness (a device's backoff, one traffic generator,
//! the PHY error draws, agent exploration, ...) gets its own stream keyed by
//! `(episode seed, name)`. Streams are counter-based ChaCha8 keystreams: the
//! seed selects the key, the hashed name selects the stream id, so draws on
//! one stream never perturb another and episodes can run in parallel without
//! sharing state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Factory for [`RngStream`]s of one episode.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Opens the stream `name`. The same `(seed, name)` always yields the
    /// identical sequence.
    pub fn stream(&self, name: &str) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        RngStream { rng }
    }
}

/// One independent random sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    pub fn next_uniform(&mut self) -> f64 {
        self.rng.gen()
    }

    /// Unbiased uniform integer from `0..=hi_inclusive`.
    pub fn uniform_int(&mut self, hi_inclusive: u32) -> u32 {
        self.rng.gen_range(0..=hi_inclusive)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ---------------------------------------------------------------------------
