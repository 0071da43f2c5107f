//! Counter-based Gaussian streams.
//!
//! A stream is a ChaCha8 keystream keyed by `(seed, label)`. Variate `i`
//! consumes 64-bit words `2i` and `2i+1` and maps them to a standard normal
//! by the cosine branch of Box-Muller, so any index can be generated on its
//! own and the result never depends on evaluation order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of two words; stable across platforms and releases.
pub fn stable_hash(a: u64, b: u64) -> u64 {
    mix64(mix64(a ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(b))
}

/// Seed of sample `index` in a harness run seeded with `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    stable_hash(seed, index)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut state = stable_hash(seed, label_hash(label));
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// The variate at `index`.
    pub fn at(&mut self, index: u64) -> f64 {
        self.rng.set_word_pos(4 * index as u128);
        self.next()
    }

    /// Fills `out` with variates 0, 1, 2, ...
    pub fn fill(&mut self, out: &mut [f64]) {
        self.rng.set_word_pos(0);
        for x in out {
            *x = self.next();
        }
    }

    fn next(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
