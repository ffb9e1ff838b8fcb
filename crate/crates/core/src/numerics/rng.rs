//! Seeded random streams.
//!
//! Backed by ChaCha8 (a counter-based stream cipher generator). A stream is
//! fully determined by its 64-bit seed; [`Rng::fork`] derives independent
//! child streams by hashing the parent seed with a label, so pipeline stages
//! can be replayed in isolation.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `label`; independent of how much of the parent
    /// has been consumed.
    pub fn fork(&self, label: &str) -> Rng {
        Rng::seed_from_u64(derive_seed(self.seed, label))
    }

    /// Child stream keyed by an index (per-record or per-epoch streams).
    pub fn fork_index(&self, label: &str, index: u64) -> Rng {
        Rng::seed_from_u64(splitmix(derive_seed(self.seed, label) ^ splitmix(index)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform integer in `[low, high]`.
    pub fn int_inclusive(&mut self, low: usize, high: usize) -> usize {
        self.inner.random_range(low..=high)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn exponential(&mut self, rate: f64) -> f64 {
        Exp::new(rate)
            .expect("exponential rate must be positive")
            .sample(&mut self.inner)
    }

    pub fn poisson(&mut self, mean: f64) -> u32 {
        if mean <= 0.0 {
            return 0;
        }
        let draw: f64 = Poisson::new(mean)
            .expect("poisson mean must be positive")
            .sample(&mut self.inner);
        draw as u32
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label, folded into the seed through splitmix.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(seed ^ splitmix(h))
}
