//! Minibatch training with validation-AUC model selection.
//!
//! Every random choice is derived from `TrainConfig::seed`: the batch order
//! of epoch `e` from tags `[shuffle, e]`, the objective noise of batch `b` in
//! epoch `e` from `[noise, e, b]`, and validation predictions from
//! [`prediction_seed`]. Two runs with the same inputs produce identical
//! histories and parameters.

use std::collections::BTreeMap;

use chmm_autodiff::{clip_global_norm, Adam, Tape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::Model;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_window, prediction_seed};
use crate::model::SeqBatch;
use crate::objective::{KlMode, ObjectiveOptions};
use crate::rng::{derive_seed, rng_for, GaussianNoise};
use crate::scm::DatasetBundle;
use crate::types::SequenceSample;

const TAG_SHUFFLE: u64 = 0x5348_5546;
const TAG_NOISE: u64 = 0x4e4f_4953;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ValAuc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::clip_norm")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// Stop after this many epochs without a new best validation AUC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default)]
    pub selection: SelectionMetric,
    #[serde(default = "defaults::n_mc_train")]
    pub n_mc_train: usize,
    #[serde(default = "defaults::n_mc_eval")]
    pub n_mc_eval: usize,
    #[serde(default)]
    pub kl_mode: KlMode,
    #[serde(default = "defaults::classification_weight")]
    pub classification_weight: f64,
    /// Epochs before checkpoint selection and the patience counter start.
    #[serde(default)]
    pub selection_warmup: usize,
}

mod defaults {
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn clip_norm() -> f64 {
        5.0
    }
    pub fn n_mc_train() -> usize {
        8
    }
    pub fn n_mc_eval() -> usize {
        64
    }
    pub fn classification_weight() -> f64 {
        1.0
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            clip_norm: defaults::clip_norm(),
            seed: 0,
            patience: None,
            selection: SelectionMetric::ValAuc,
            n_mc_train: defaults::n_mc_train(),
            n_mc_eval: defaults::n_mc_eval(),
            kl_mode: KlMode::ClosedForm,
            classification_weight: defaults::classification_weight(),
            selection_warmup: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train.epochs", self.epochs),
            ("train.batch_size", self.batch_size),
            ("train.n_mc_train", self.n_mc_train),
            ("train.n_mc_eval", self.n_mc_eval),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "train.learning_rate must be finite and non-negative".into(),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("train.clip_norm must be positive".into()));
        }
        if !(self.classification_weight >= 0.0 && self.classification_weight.is_finite()) {
            return Err(Error::Config(
                "train.classification_weight must be finite and non-negative".into(),
            ));
        }
        if self.selection_warmup >= self.epochs {
            return Err(Error::Config(format!(
                "train.selection_warmup must be below train.epochs ({})",
                self.epochs
            )));
        }
        if let Some(p) = self.patience {
            if p == 0 || p > self.epochs {
                return Err(Error::Config(format!(
                    "train.patience must be in 1..={}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    pub fn objective_options(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            n_mc: self.n_mc_train,
            kl_mode: self.kl_mode,
            classification_weight: self.classification_weight,
        }
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Sequence-weighted means of the objective terms.
    pub terms: BTreeMap<String, f64>,
    pub val_acc: f64,
    pub val_auc: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation-AUC epoch.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub best_val_acc: f64,
    pub history: Vec<EpochRecord>,
}

/// Trains on the bundle's train split, selecting on its val split.
pub fn train(model: Model, bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_on(model, &bundle.train, &bundle.val, cfg, &mut |_| Ok(()))
}

/// Trains on explicit splits, calling `on_epoch` after every epoch.
pub fn train_on(
    mut model: Model,
    train: &[SequenceSample],
    val: &[SequenceSample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(
            "training needs nonempty train and val splits".into(),
        ));
    }
    let steps = train[0].len();
    if val.iter().chain(train).any(|s| s.len() != steps) {
        return Err(Error::Contract(
            "all sequences must share one length".into(),
        ));
    }
    let opts = cfg.objective_options();
    let mut adam = Adam::new(model.store(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, chmm_autodiff::ParamStore)> = None;
    let mut since_best = 0usize;
    let eval_seed = prediction_seed(cfg.seed);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut terms: BTreeMap<String, f64> = BTreeMap::new();
        let mut grad_norm = 0.0;
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = SeqBatch::from_samples(chunk.iter().map(|&i| &train[i]))?;
            let mut noise =
                GaussianNoise::new(derive_seed(cfg.seed, &[TAG_NOISE, epoch as u64, b as u64]));
            let tape = Tape::new();
            let graph = model.loss(&tape, &batch, &opts, &mut noise)?;
            let loss = graph.loss.item();
            if !loss.is_finite() {
                let term = graph
                    .metrics
                    .iter()
                    .find(|(_, v)| !v.is_finite())
                    .map_or_else(|| "loss".to_string(), |(k, _)| k.clone());
                return Err(Error::NonFinite { term, epoch });
            }
            let mut grads = tape.backward(graph.loss).params();
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    term: "gradient".into(),
                    epoch,
                });
            }
            adam.step(model.store_mut(), &grads);
            let w = chunk.len() as f64 / train.len() as f64;
            loss_sum += loss * w;
            grad_norm += norm / n_batches as f64;
            for (k, v) in graph.metrics {
                *terms.entry(k).or_insert(0.0) += v * w;
            }
        }
        let val_metrics = evaluate_window(&model, val, (1, steps), cfg.n_mc_eval, eval_seed)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum,
            terms,
            val_acc: val_metrics.acc,
            val_auc: val_metrics.auc,
            grad_norm,
        };
        on_epoch(&record)?;
        history.push(record);
        if epoch <= cfg.selection_warmup {
            continue;
        }
        if best
            .as_ref()
            .is_none_or(|b| (val_metrics.auc, val_metrics.acc) > (b.1, b.2))
        {
            best = Some((
                epoch,
                val_metrics.auc,
                val_metrics.acc,
                model.store().clone(),
            ));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    let (best_epoch, best_val_auc, best_val_acc, store) = best.expect("at least one epoch");
    *model.store_mut() = store;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_auc,
        best_val_acc,
        history,
    })
}
