//! Counter-addressed random streams.
//!
//! Every noise draw is addressed by `(seed, stream_id)`; ChaCha's native
//! 64-bit stream selector gives each id an independent keystream, so the
//! result of a certification never depends on how work is split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed, e.g. one per dataset item.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5DEE_CE66_D1CE_4E5B)))
}

fn expand_key(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut s = seed;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    key
}

/// Which phase of a certification a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Selection = 0,
    Estimation = 1,
}

/// Which input a draw perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Left = 0,
    Right = 1,
    Full = 2,
}

/// Stream id for noise sample `index` of `branch` in `phase`.
///
/// Layout: 2 bits phase, 2 bits branch, 60 bits sample index. Selection and
/// estimation never share ids.
#[inline]
pub fn sample_stream_id(phase: Phase, branch: Branch, index: u64) -> u64 {
    debug_assert!(index < (1 << 60));
    ((phase as u64) << 62) | ((branch as u64) << 60) | (index & ((1 << 60) - 1))
}

/// A deterministic random stream addressed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    draws: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(expand_key(seed));
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of normal variates drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Adds `sigma * N(0, 1)` to every element in place.
    pub fn perturb(&mut self, values: &mut [f64], sigma: f64) {
        for v in values {
            *v += sigma * self.standard_normal();
        }
    }
}
