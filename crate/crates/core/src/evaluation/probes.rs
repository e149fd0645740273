//! Linear probes on frozen latents.
//!
//! A logistic probe is fitted on the training split's final-step posterior
//! means of one representation, then scored on every split; `drop = val - test`.

use std::collections::BTreeMap;

use chmm_autodiff::{Adam, Linear, Matrix, ParamStore, Tape};
use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auc};
use crate::error::{Error, Result};
use crate::model::{SeqBatch, SeqVaeNet};
use crate::types::{Label, SequenceSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    /// L2 penalty on the weights (not the bias).
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_iters: 3000,
            tolerance: 1e-6,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub acc: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub train: SplitScores,
    pub val: SplitScores,
    pub test: SplitScores,
    pub drop_acc: f64,
    pub drop_auc: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Keyed by representation name (`s+v`, `z`).
    pub probes: BTreeMap<String, ProbeMetrics>,
}

/// Fitted logistic probe with its input standardisation.
#[derive(Debug, Clone)]
pub struct LogisticProbe {
    mean: Array2<f64>,
    scale: Array2<f64>,
    store: ParamStore,
    layer: Linear,
    pub iterations: usize,
}

impl LogisticProbe {
    pub fn fit(features: &Matrix, labels: &[Label], cfg: &ProbeConfig) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || n != labels.len() {
            return Err(Error::Contract(format!(
                "probe needs matching nonempty features ({n}) and labels ({})",
                labels.len()
            )));
        }
        let mean = features
            .mean_axis(Axis(0))
            .expect("nonempty")
            .insert_axis(Axis(0));
        let std = features
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 })
            .insert_axis(Axis(0));
        let x = (features - &mean) / &std;
        let y = Array2::from_shape_fn((n, 1), |(i, _)| labels[i].signed() as f64);
        let mut store = ParamStore::new();
        let weight = store.add("probe.weight", Array2::zeros((d, 1)));
        let bias = store.add("probe.bias", Array2::zeros((1, 1)));
        let layer = Linear {
            weight,
            bias,
            in_dim: d,
            out_dim: 1,
        };
        let mut adam = Adam::new(&store, cfg.learning_rate);
        let mut iterations = 0;
        for _ in 0..cfg.max_iters {
            let tape = Tape::new();
            let logits = layer.forward(&tape, &store, tape.constant(x.clone()));
            let nll = -(logits * tape.constant(y.clone())).log_sigmoid().mean();
            let w = tape.param(&store, weight);
            let loss = nll + w.square().sum() * (0.5 * cfg.weight_decay);
            let grads = tape.backward(loss).params();
            iterations += 1;
            let norm = chmm_autodiff::global_norm(&grads);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    term: "probe gradient".into(),
                    epoch: iterations,
                });
            }
            if norm < cfg.tolerance {
                break;
            }
            adam.step(&mut store, &grads);
        }
        Ok(Self {
            mean,
            scale: std,
            store,
            layer,
            iterations,
        })
    }

    pub fn predict(&self, features: &Matrix) -> Vec<f64> {
        let x = (features - &self.mean) / &self.scale;
        let tape = Tape::new();
        self.layer
            .forward(&tape, &self.store, tape.constant(x))
            .sigmoid()
            .value()
            .column(0)
            .to_vec()
    }
}

fn scores(probe: &LogisticProbe, x: &Matrix, labels: &[Label]) -> Result<SplitScores> {
    let p = probe.predict(x);
    Ok(SplitScores {
        acc: accuracy(&p, labels, 0.5)?,
        auc: auc(&p, labels)?,
    })
}

/// Fits one probe on `train` and scores it on all three splits.
pub fn probe_representation(
    train: (&Matrix, &[Label]),
    val: (&Matrix, &[Label]),
    test: (&Matrix, &[Label]),
    cfg: &ProbeConfig,
) -> Result<ProbeMetrics> {
    let probe = LogisticProbe::fit(train.0, train.1, cfg)?;
    let train_s = scores(&probe, train.0, train.1)?;
    let val_s = scores(&probe, val.0, val.1)?;
    let test_s = scores(&probe, test.0, test.1)?;
    Ok(ProbeMetrics {
        train: train_s,
        val: val_s,
        test: test_s,
        drop_acc: val_s.acc - test_s.acc,
        drop_auc: val_s.auc - test_s.auc,
        iterations: probe.iterations,
    })
}

/// Final-step posterior means per block, one row per sequence.
pub fn final_step_latents(net: &SeqVaeNet, samples: &[SequenceSample]) -> Result<Vec<Matrix>> {
    let batch = SeqBatch::from_samples(samples)?;
    Ok(net
        .posterior_means(&batch)
        .pop()
        .expect("at least one step"))
}

/// Probes on `s ⊕ v` and on `z` of a three-block model.
pub fn probe_robustness(
    net: &SeqVaeNet,
    train: &[SequenceSample],
    val: &[SequenceSample],
    test: &[SequenceSample],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let layout = net.layout();
    let (Some(s), Some(v), Some(z)) = (
        layout.index_of("s"),
        layout.index_of("v"),
        layout.index_of("z"),
    ) else {
        return Err(Error::Contract(
            "probes need a model with s, v and z blocks".into(),
        ));
    };
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Contract(
            "probes need nonempty train, val and test splits".into(),
        ));
    }
    let reps = |samples: &[SequenceSample]| -> Result<(Matrix, Matrix, Vec<Label>)> {
        let lat = final_step_latents(net, samples)?;
        let sv = concatenate(Axis(1), &[lat[s].view(), lat[v].view()]).expect("same rows");
        Ok((sv, lat[z].clone(), samples.iter().map(|q| q.y).collect()))
    };
    let (tr, va, te) = (reps(train)?, reps(val)?, reps(test)?);
    let mut probes = BTreeMap::new();
    probes.insert(
        "s+v".to_string(),
        probe_representation((&tr.0, &tr.2), (&va.0, &va.2), (&te.0, &te.2), cfg)?,
    );
    probes.insert(
        "z".to_string(),
        probe_representation((&tr.1, &tr.2), (&va.1, &va.2), (&te.1, &te.2), cfg)?,
    );
    Ok(ProbeReport { probes })
}
