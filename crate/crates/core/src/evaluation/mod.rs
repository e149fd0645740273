//! Prediction, metrics, latent alignment, probes, saliency and the
//! two-proportion test.

mod alignment;
mod metrics;
mod probes;
mod saliency;
mod stats;

pub use alignment::{
    align_blocks, block_alignment, held_out_r2, quadratic_features, sufficient_statistics,
    truth_alignment, AlignmentReport, ALIGNMENT_RIDGE,
};
pub use metrics::{accuracy, auc};
pub use probes::{
    final_step_latents, probe_representation, probe_robustness, LogisticProbe, ProbeConfig,
    ProbeMetrics, ProbeReport, SplitScores,
};
pub use saliency::{saliency, Heatmap};
pub use stats::{two_proportion_z_test, ZTest};

use serde::{Deserialize, Serialize};

use crate::baselines::Model;
use crate::error::Result;
use crate::model::SeqBatch;
use crate::rng::{derive_seed, GaussianNoise};
use crate::types::{Label, SequenceSample};

const TAG_PREDICT: u64 = 0x5052_4544;

/// Seed of the prediction noise for a run seeded with `seed`.
pub fn prediction_seed(seed: u64) -> u64 {
    derive_seed(seed, &[TAG_PREDICT])
}

/// `P(y = +1)` per sequence from steps `t1..=t2` (1-based) only: the
/// posterior starts from the initial state at `t1` and the classifier reads
/// the latent at `t2`.
pub fn predict_window(
    model: &Model,
    batch: &SeqBatch,
    t1: usize,
    t2: usize,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let window = batch.window(t1, t2)?;
    Ok(model.predict_proba(&window, n_mc, &mut GaussianNoise::new(seed)))
}

/// Single-sequence form of [`predict_window`].
pub fn predict(
    model: &Model,
    seq: &SequenceSample,
    t1: usize,
    t2: usize,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let batch = SeqBatch::from_samples([seq])?;
    Ok(predict_window(model, &batch, t1, t2, n_mc, seed)?[0])
}

/// Every window `1 <= t1 <= t2 <= steps`, ordered by `t1` then `t2`.
pub fn window_grid(steps: usize) -> Vec<(usize, usize)> {
    (1..=steps)
        .flat_map(|a| (a..=steps).map(move |b| (a, b)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub acc: f64,
    pub auc: f64,
}

/// ACC (threshold 0.5) and AUC of `model` on `samples` over a window.
pub fn evaluate_window(
    model: &Model,
    samples: &[SequenceSample],
    window: (usize, usize),
    n_mc: usize,
    seed: u64,
) -> Result<ClassificationMetrics> {
    let batch = SeqBatch::from_samples(samples)?;
    let p = predict_window(model, &batch, window.0, window.1, n_mc, seed)?;
    let labels: Vec<Label> = samples.iter().map(|s| s.y).collect();
    Ok(ClassificationMetrics {
        acc: accuracy(&p, &labels, 0.5)?,
        auc: auc(&p, &labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_size() {
        for n in 1..7 {
            let g = window_grid(n);
            assert_eq!(g.len(), n * (n - 1) / 2 + n);
            assert!(g.iter().all(|&(a, b)| 1 <= a && a <= b && b <= n));
        }
    }
}
