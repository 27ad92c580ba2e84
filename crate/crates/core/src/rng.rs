//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by `(master seed, purpose)` and
//! positioned on the 64-bit stream id `path`. Any path can be regenerated in
//! isolation and results never depend on thread scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// What a stream is used for. Distinct purposes never share random words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Poisson epochs, marks and jump times of the shot noise skeleton.
    Jumps = 1,
    /// Brownian increments on the regular grid.
    Brownian = 2,
    /// Brownian bridge values at jump times.
    Bridge = 3,
    /// Anything test- or diagnostics-related.
    Auxiliary = 4,
}

const SALT: u64 = 0x5eed_1e5e_0f5b_de00;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, path: u64, purpose: Purpose) -> Self {
        let mut key = [0u8; 32];
        let words = [
            seed,
            purpose as u64,
            mix(seed ^ SALT),
            mix((purpose as u64).wrapping_add(SALT)),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(path);
        Self { inner }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `(0, 1]`.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }

    pub fn exponential(&mut self) -> f64 {
        Exp1.sample(&mut self.inner)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
