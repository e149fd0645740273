//! Held-out alignment of learned latent blocks with true latent blocks.
//!
//! Rows are (sequence, step) pairs. Learned posterior means are expanded to
//! `[mu, mu_i * mu_j (i <= j)]`, true blocks to their Gaussian sufficient
//! statistics `[o, o^2]`; a ridge-regularised affine map is fitted on the
//! even-indexed sequences and scored by R² on the odd-indexed ones.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ridge_fit;
use crate::model::{SeqBatch, SeqVaeNet};
use crate::types::SequenceSample;

pub const ALIGNMENT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub learned: Vec<String>,
    pub truth: Vec<String>,
    /// `r2[i][j]`: learned block `i` predicting true block `j`.
    pub r2: Vec<Vec<f64>>,
    /// Same-name pairs.
    pub same_block: BTreeMap<String, f64>,
    /// For each learned block, the largest R² towards any other true block.
    pub max_cross_block: BTreeMap<String, f64>,
    pub mean_diagonal: f64,
    pub mean_off_diagonal: f64,
    pub fit_rows: usize,
    pub held_out_rows: usize,
}

impl AlignmentReport {
    pub fn get(&self, learned: &str, truth: &str) -> Option<f64> {
        let i = self.learned.iter().position(|n| n == learned)?;
        let j = self.truth.iter().position(|n| n == truth)?;
        Some(self.r2[i][j])
    }

    /// Off-diagonal entries of the same-name block pairs, keyed `learned->truth`.
    pub fn leakage(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (i, l) in self.learned.iter().enumerate() {
            for (j, t) in self.truth.iter().enumerate() {
                if l != t {
                    out.insert(format!("{l}->{t}"), self.r2[i][j]);
                }
            }
        }
        out
    }
}

/// Quadratic feature expansion `[x, x_i x_j (i <= j)]` row by row.
pub fn quadratic_features(x: &DMatrix<f64>) -> DMatrix<f64> {
    let d = x.ncols();
    let cols = d + d * (d + 1) / 2;
    DMatrix::from_fn(x.nrows(), cols, |r, c| {
        if c < d {
            return x[(r, c)];
        }
        let mut k = c - d;
        let mut i = 0;
        while k >= d - i {
            k -= d - i;
            i += 1;
        }
        x[(r, i)] * x[(r, i + k)]
    })
}

/// `[o, o^2]` row by row.
pub fn sufficient_statistics(o: &DMatrix<f64>) -> DMatrix<f64> {
    let d = o.ncols();
    DMatrix::from_fn(o.nrows(), 2 * d, |r, c| {
        if c < d {
            o[(r, c)]
        } else {
            o[(r, c - d)].powi(2)
        }
    })
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// Held-out R² of the ridge map from `features` to `targets`, averaged over
/// target columns. Columns constant on the held-out rows are skipped.
pub fn held_out_r2(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    fit: &[usize],
    held: &[usize],
) -> Result<f64> {
    let (xf, yf) = (select_rows(features, fit), select_rows(targets, fit));
    let (coef, intercept) = ridge_fit(&xf, &yf, ALIGNMENT_RIDGE)?;
    let (xh, yh) = (select_rows(features, held), select_rows(targets, held));
    let mut pred = &xh * &coef;
    for mut row in pred.row_iter_mut() {
        row += &intercept;
    }
    let mut scores = Vec::new();
    for c in 0..yh.ncols() {
        let col = yh.column(c);
        let mean = col.mean();
        let sst: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        if sst <= f64::EPSILON * held.len() as f64 {
            continue;
        }
        let sse: f64 = col
            .iter()
            .zip(pred.column(c).iter())
            .map(|(v, p)| (v - p).powi(2))
            .sum();
        scores.push(1.0 - sse / sst);
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric(
            "every target column is constant on the held-out rows".into(),
        ));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Alignment between arbitrary learned and true blocks. Each block is a
/// matrix with one row per (sequence, step); `sequence_of[r]` gives the
/// sequence of row `r`, whose parity selects the fold.
pub fn align_blocks(
    learned: &[(String, DMatrix<f64>)],
    truth: &[(String, DMatrix<f64>)],
    sequence_of: &[usize],
) -> Result<AlignmentReport> {
    let rows = sequence_of.len();
    if learned.iter().chain(truth).any(|(_, m)| m.nrows() != rows) {
        return Err(Error::Contract(
            "every block needs one row per (sequence, step)".into(),
        ));
    }
    let fit: Vec<usize> = (0..rows).filter(|&r| sequence_of[r] % 2 == 0).collect();
    let held: Vec<usize> = (0..rows).filter(|&r| sequence_of[r] % 2 == 1).collect();
    if fit.is_empty() || held.is_empty() {
        return Err(Error::Contract(
            "alignment needs at least two sequences".into(),
        ));
    }
    let feats: Vec<DMatrix<f64>> = learned.iter().map(|(_, m)| quadratic_features(m)).collect();
    let targets: Vec<DMatrix<f64>> = truth
        .iter()
        .map(|(_, m)| sufficient_statistics(m))
        .collect();
    let mut r2 = vec![vec![0.0; truth.len()]; learned.len()];
    for (i, f) in feats.iter().enumerate() {
        for (j, t) in targets.iter().enumerate() {
            r2[i][j] = held_out_r2(f, t, &fit, &held)?;
        }
    }
    let learned_names: Vec<String> = learned.iter().map(|(n, _)| n.clone()).collect();
    let truth_names: Vec<String> = truth.iter().map(|(n, _)| n.clone()).collect();
    let mut same_block = BTreeMap::new();
    let mut max_cross_block = BTreeMap::new();
    let (mut diag, mut off) = (Vec::new(), Vec::new());
    for (i, l) in learned_names.iter().enumerate() {
        let mut cross = f64::NEG_INFINITY;
        for (j, t) in truth_names.iter().enumerate() {
            if l == t {
                same_block.insert(l.clone(), r2[i][j]);
                diag.push(r2[i][j]);
            } else {
                cross = cross.max(r2[i][j]);
                off.push(r2[i][j]);
            }
        }
        if cross.is_finite() {
            max_cross_block.insert(l.clone(), cross);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(AlignmentReport {
        learned: learned_names,
        truth: truth_names,
        r2,
        same_block,
        max_cross_block,
        mean_diagonal: mean(&diag),
        mean_off_diagonal: mean(&off),
        fit_rows: fit.len(),
        held_out_rows: held.len(),
    })
}

fn truth_blocks(samples: &[SequenceSample]) -> Result<Vec<(String, DMatrix<f64>)>> {
    if samples.is_empty() || samples.iter().any(|s| s.truth.is_none()) {
        return Err(Error::Contract(
            "alignment needs true latents; this dataset has none".into(),
        ));
    }
    let (n, steps) = (samples.len(), samples[0].len());
    let truth = |r: usize| &samples[r % n].truth.as_ref().expect("checked")[r / n];
    Ok(["s", "v", "z"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let d = truth(0).blocks()[k].len();
            (
                name.to_string(),
                DMatrix::from_fn(n * steps, d, |r, c| truth(r).blocks()[k][c]),
            )
        })
        .collect())
}

fn step_major_sequences(n: usize, steps: usize) -> Vec<usize> {
    (0..steps).flat_map(|_| 0..n).collect()
}

/// Learned posterior means (zero-noise rollout) against the simulator's
/// true latents, over every observed step.
pub fn block_alignment(net: &SeqVaeNet, samples: &[SequenceSample]) -> Result<AlignmentReport> {
    let truth = truth_blocks(samples)?;
    let batch = SeqBatch::from_samples(samples)?;
    let means = net.posterior_means(&batch);
    let (n, steps) = (samples.len(), batch.num_steps());
    let layout = net.layout();
    let learned: Vec<(String, DMatrix<f64>)> = layout
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let m = DMatrix::from_fn(n * steps, layout.dims[k], |r, c| {
                means[r / n][k][[r % n, c]]
            });
            (name.to_string(), m)
        })
        .collect();
    align_blocks(&learned, &truth, &step_major_sequences(n, steps))
}

/// The true latents aligned against themselves: the ceiling any learned
/// representation can reach, including the cross-block R² that comes from
/// blocks sharing the attribute input.
pub fn truth_alignment(samples: &[SequenceSample]) -> Result<AlignmentReport> {
    let truth = truth_blocks(samples)?;
    align_blocks(
        &truth,
        &truth,
        &step_major_sequences(samples.len(), samples[0].len()),
    )
}
