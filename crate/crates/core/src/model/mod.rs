//! The sequential variational model: configuration, batching, networks and
//! checkpoints.

mod batch;
mod checkpoint;
mod config;
mod net;

pub use batch::{SeqBatch, StepBatch};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::{DecoderVariance, InitialState, ModelConfig, ModelKind, Nonlinearity};
pub use net::{EncodedStep, GaussianVar, LatentLayout, PriorCarry, RolloutStep, SeqVaeNet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Factorised Gaussian. `log_var` is clamped on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>, clamp: f64) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::Contract(format!(
                "mean has {} entries, log_var {}",
                mean.len(),
                log_var.len()
            )));
        }
        let log_var = log_var
            .into_iter()
            .map(|l| l.clamp(-clamp, clamp))
            .collect();
        Ok(Self { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| l.exp()).collect()
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Contract(format!(
                "point has {} entries, distribution {}",
                x.len(),
                self.dim()
            )));
        }
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.log_var)
            .map(|((x, m), lv)| -0.5 * (ln2pi + lv + (x - m).powi(2) / lv.exp()))
            .sum())
    }
}

/// `mean + exp(log_var / 2) * noise`.
pub fn reparameterize(g: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::Contract(format!(
            "noise has {} entries, distribution {}",
            noise.len(),
            g.dim()
        )));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}
