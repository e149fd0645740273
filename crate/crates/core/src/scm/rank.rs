//! Full-rank check on the natural parameters of the block transitions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::params::{Block, ScmParams};
use crate::error::{Error, Result};
use crate::linalg::singular_values;

pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRank {
    pub block: Block,
    /// Rows (`2 * d_o`) by columns (prototypes minus one).
    pub shape: (usize, usize),
    pub singular_values: Vec<f64>,
    pub smallest: f64,
    pub full_rank: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub step: usize,
    pub prototypes: usize,
    pub blocks: Vec<BlockRank>,
}

impl RankReport {
    pub fn all_full_rank(&self) -> bool {
        self.blocks.iter().all(|b| b.full_rank)
    }
}

/// Natural parameters `(mu / sigma^2, -1 / (2 sigma^2))` of block `b` at step
/// `t` under prototype `k`. Earlier steps follow the noise-free mean path.
pub fn natural_parameters(
    params: &ScmParams,
    block: Block,
    prototype: usize,
    t: usize,
) -> Vec<f64> {
    let tr = params.transition(block);
    let pop = &params.base_population;
    let mut prev = vec![0.0; tr.dim];
    for tau in 0..t - 1 {
        prev = tr.gaussian(&prev, &pop.noise_free(prototype, tau)).0;
    }
    let (mean, log_var) = tr.gaussian(&prev, &pop.noise_free(prototype, t - 1));
    let noise2 = params.transition_noise * params.transition_noise;
    let var: Vec<f64> = log_var.iter().map(|lv| noise2 * lv.exp()).collect();
    mean.iter()
        .zip(&var)
        .map(|(m, v)| m / v)
        .chain(var.iter().map(|v| -0.5 / v))
        .collect()
}

/// Builds the `2 d_o x (P - 1)` matrix of natural-parameter differences
/// against the first prototype for every block and reports its singular
/// values. A block is full rank when its smallest singular value exceeds
/// [`RANK_TOLERANCE`].
pub fn check_rank_condition(params: &ScmParams, t: usize) -> Result<RankReport> {
    let d = params.dims;
    if t < 1 || t > d.steps() {
        return Err(Error::Precondition(format!(
            "step {t} outside 1..={}",
            d.steps()
        )));
    }
    let pop = &params.base_population;
    let m = d.required_prototypes();
    if pop.distinct_prototypes() < m {
        return Err(Error::Precondition(format!(
            "population has {} distinct prototypes, the rank condition needs at least {m}",
            pop.distinct_prototypes()
        )));
    }
    if params.transition_noise <= 0.0 {
        return Err(Error::Precondition(
            "natural parameters need a positive transition noise".into(),
        ));
    }
    let p = pop.prototypes.len();
    let blocks = Block::ALL
        .iter()
        .map(|&b| {
            let base = natural_parameters(params, b, 0, t);
            let rows = base.len();
            let mut mat = DMatrix::zeros(rows, p - 1);
            for k in 1..p {
                let g = natural_parameters(params, b, k, t);
                for r in 0..rows {
                    mat[(r, k - 1)] = g[r] - base[r];
                }
            }
            let sv = singular_values(&mat);
            let smallest = if sv.len() < rows { 0.0 } else { sv[rows - 1] };
            BlockRank {
                block: b,
                shape: (rows, p - 1),
                singular_values: sv,
                smallest,
                full_rank: smallest > RANK_TOLERANCE,
            }
        })
        .collect();
    Ok(RankReport {
        step: t,
        prototypes: p,
        blocks,
    })
}
