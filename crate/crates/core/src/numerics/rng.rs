//! Counter-based random streams.
//!
//! Every stream is keyed by `(seed, round, client, purpose)`. The key is
//! hashed into a ChaCha seed, so a stream never depends on how many draws
//! other streams have made. Clients can therefore be trained in any order
//! (or in parallel) without changing results.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Client slot used for server-level streams.
pub const SERVER: u64 = u64::MAX;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    ModelInit,
    Participation,
    Churn,
    ChurnInit,
    Batch,
    Probe,
    ProbeBatch,
    Fleet,
    Split,
    Custom(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::ModelInit => 1,
            Purpose::Participation => 2,
            Purpose::Churn => 3,
            Purpose::ChurnInit => 4,
            Purpose::Batch => 5,
            Purpose::Probe => 6,
            Purpose::ProbeBatch => 7,
            Purpose::Fleet => 8,
            Purpose::Split => 9,
            Purpose::Custom(v) => 0x1000_0000 ^ v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Domain {
    pub round: u64,
    pub client: u64,
    pub purpose: Purpose,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream for one `(seed, domain)` pair.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, domain: Domain) -> Self {
        let mut state = seed;
        let mut h = splitmix64(&mut state);
        for part in [domain.round, domain.client, domain.purpose.tag()] {
            state = h ^ part;
            h = splitmix64(&mut state);
        }
        let mut key = [0u64; 4];
        for k in key.iter_mut() {
            *k = splitmix64(&mut state);
        }
        let mut bytes = [0u8; 32];
        for (chunk, k) in bytes.chunks_exact_mut(8).zip(key) {
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        Self { inner: ChaCha12Rng::from_seed(bytes) }
    }

    /// Shorthand for `new(seed, Domain { round, client, purpose })`.
    pub fn for_domain(seed: u64, round: u64, client: u64, purpose: Purpose) -> Self {
        Self::new(seed, Domain { round, client, purpose })
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices drawn uniformly from `[0, n)`.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, amount).into_vec()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
