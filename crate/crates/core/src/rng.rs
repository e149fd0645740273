//! Seeding rules and noise sources.
//!
//! Every random stream is a `ChaCha8Rng` seeded from a 64-bit seed derived
//! with [`derive_seed`]: `h = mix(seed)`, then `h = mix(h ^ tag)` for each tag
//! in order, where `mix` is the SplitMix64 finaliser. Streams derived from
//! distinct tag paths are independent, so per-sequence generation can run in
//! any order (or in parallel) without changing results.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use chmm_autodiff::Matrix;

pub type SeededRng = ChaCha8Rng;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |h, &t| splitmix64(h ^ t))
}

pub fn rng_for(seed: u64, tags: &[u64]) -> SeededRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Supplies standard-normal noise for reparameterised sampling.
pub trait NoiseSource {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix;
}

/// Seeded Gaussian noise.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    rng: SeededRng,
}

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(rng: SeededRng) -> Self {
        Self { rng }
    }
}

impl NoiseSource for GaussianNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix {
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut self.rng))
    }
}

/// All-zero noise: sampling returns distribution means.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix {
        Array2::zeros((rows, cols))
    }
}

/// Pre-recorded noise replayed in order; used to pin draws in tests.
#[derive(Debug, Clone)]
pub struct ReplayNoise {
    draws: std::collections::VecDeque<Matrix>,
}

impl ReplayNoise {
    pub fn new(draws: impl IntoIterator<Item = Matrix>) -> Self {
        Self {
            draws: draws.into_iter().collect(),
        }
    }
}

impl NoiseSource for ReplayNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix {
        let m = self.draws.pop_front().expect("replay noise exhausted");
        assert_eq!(m.dim(), (rows, cols), "replayed noise has the wrong shape");
        m
    }
}
