//! Counter-based Gaussian noise keyed on `(seed, stream, counter)`.
//!
//! Each normal consumes four 32-bit words of a ChaCha8 stream at word
//! position `4 * counter`, so a draw depends only on its key and never on
//! evaluation order or thread scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// Random-access standard normals for one `(seed, stream)` pair.
pub struct KeyedNormals {
    rng: ChaCha8Rng,
}

impl KeyedNormals {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Box-Muller normal at `counter`.
    pub fn at(&mut self, counter: u64) -> f64 {
        self.rng.set_word_pos(u128::from(counter) * 4);
        let u1 = ((self.rng.next_u64() >> 11) as f64 + 1.0) * TWO_POW_M53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * TWO_POW_M53;
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform on `[0, 1)` at `counter`, sharing the normal keyspace.
    pub fn uniform_at(&mut self, counter: u64) -> f64 {
        self.rng.set_word_pos(u128::from(counter) * 4);
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_M53
    }
}

/// One keyed standard normal.
pub fn keyed_normal(seed: u64, stream: u64, counter: u64) -> f64 {
    KeyedNormals::new(seed, stream).at(counter)
}
