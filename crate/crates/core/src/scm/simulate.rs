//! Ancestral sampling from a [`ScmParams`].

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use super::params::{Block, ScmParams};
use super::population::PopulationSpec;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::types::{Label, LatentState, ObservationStep, SequenceSample};

/// Split tags for per-sequence seeds: the sequence `i` of split `k` uses
/// `derive_seed(params.seed, [TAG_SPLIT, k, i])`.
pub const TAG_SPLIT: u64 = 0x5350_4c54;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

fn gaussian_draw<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &[f64],
    log_var: &[f64],
    mult: f64,
) -> Vec<f64> {
    mean.iter()
        .zip(log_var)
        .map(|(m, lv)| {
            let e: f64 = StandardNormal.sample(rng);
            m + mult * (0.5 * lv).exp() * e
        })
        .collect()
}

fn noisy<R: Rng + ?Sized>(rng: &mut R, mean: Vec<f64>, sigma: f64) -> Vec<f64> {
    mean.into_iter()
        .map(|m| {
            let e: f64 = StandardNormal.sample(rng);
            m + sigma * e
        })
        .collect()
}

fn transition<R: Rng + ?Sized>(
    params: &ScmParams,
    prev: &LatentState,
    b: &[f64],
    rng: &mut R,
) -> LatentState {
    let mut draw = |block: Block, p: &[f64]| {
        let (m, lv) = params.transition(block).gaussian(p, b);
        gaussian_draw(rng, &m, &lv, params.transition_noise)
    };
    let s = draw(Block::S, &prev.s);
    let v = draw(Block::V, &prev.v);
    let z = draw(Block::Z, &prev.z);
    LatentState { s, v, z }
}

fn check_finite(state: &LatentState, step: usize) -> Result<()> {
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::Generation {
            step,
            detail: "latent state is non-finite".into(),
        })
    }
}

/// Latent trajectory `h_1..h_{T-1}` driven by a fixed attribute path.
pub fn latent_path<R: Rng + ?Sized>(
    params: &ScmParams,
    b_path: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<LatentState>> {
    let d = params.dims;
    let mut prev = LatentState::zeros(d.d_s, d.d_v, d.d_z);
    let mut out = Vec::with_capacity(b_path.len());
    for (t, b) in b_path.iter().enumerate() {
        let h = transition(params, &prev, b, rng);
        check_finite(&h, t + 1)?;
        out.push(h.clone());
        prev = h;
    }
    Ok(out)
}

/// Draws one sequence from `population` using the given seed.
///
/// Per step the draw order is: `s`, `v`, `z`, `x` noise, `A` noise; the
/// label uniform comes last.
pub fn sample_sequence(
    params: &ScmParams,
    population: &PopulationSpec,
    seed: u64,
) -> Result<SequenceSample> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(params, population, &mut rng)
}

fn sample_with_rng<R: Rng + ?Sized>(
    params: &ScmParams,
    population: &PopulationSpec,
    rng: &mut R,
) -> Result<SequenceSample> {
    let d = params.dims;
    let b_path = population.sample_path(rng, d.steps());
    let mut prev = LatentState::zeros(d.d_s, d.d_v, d.d_z);
    let mut steps = Vec::with_capacity(d.steps());
    let mut truth = Vec::with_capacity(d.steps());
    for (t, b) in b_path.into_iter().enumerate() {
        let h = transition(params, &prev, &b, rng);
        check_finite(&h, t + 1)?;
        let flat: Vec<f64> = h.s.iter().chain(&h.v).chain(&h.z).copied().collect();
        let x = noisy(rng, params.emission_x.mean(&flat), params.sigma_x);
        let a = noisy(rng, params.emission_a.mean(&h.v), params.sigma_a);
        let step = ObservationStep { x, a, b_prev: b };
        if !step.is_finite() {
            return Err(Error::Generation {
                step: t + 1,
                detail: "observation is non-finite".into(),
            });
        }
        steps.push(step);
        truth.push(h.clone());
        prev = h;
    }
    let logit = params.label.logit(&prev.s, &prev.v);
    let p = 1.0 / (1.0 + (-logit).exp());
    let u: f64 = rng.random();
    let y = if u < p {
        Label::Disease
    } else {
        Label::Healthy
    };
    Ok(SequenceSample {
        steps,
        y,
        truth: Some(truth),
    })
}

/// Seed of sequence `index` in `split`.
pub fn sequence_seed(params: &ScmParams, split: Split, index: usize) -> u64 {
    crate::rng::derive_seed(params.seed, &[TAG_SPLIT, split.tag(), index as u64])
}

/// Draws `n` sequences of `split` from `population`.
pub fn sample_split(
    params: &ScmParams,
    population: &PopulationSpec,
    split: Split,
    n: usize,
) -> Result<Vec<SequenceSample>> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(params.seed, &[TAG_SPLIT, split.tag(), i as u64]);
            sample_with_rng(params, population, &mut rng)
        })
        .collect()
}
