//! Comparison models and the [`Model`] wrapper the trainer and evaluation
//! operate on.
//!
//! `feedforward` encodes each step's observation, averages the features over
//! time and classifies. `recurrent` feeds the step features through a GRU and
//! classifies the last carry. Both read `x` only. `seq_vae` and `seq_vae_att`
//! are [`SeqVaeNet`] with a single latent block. All comparison models have
//! their width chosen so the parameter count is close to the full model's.

use std::collections::BTreeMap;

use chmm_autodiff::{Activation, Conv2d, ConvGeom, GruCell, Linear, Mlp, ParamStore, Tape, Var};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelKind, SeqBatch, SeqVaeNet};
use crate::objective::{objective_graph, ElboBreakdown, ObjectiveOptions};
use crate::rng::NoiseSource;
use crate::types::ObservationKind;

/// Allowed relative deviation of a comparison model's parameter count.
pub const BUDGET_TOLERANCE: f64 = 0.2;

const ENCODER_STRIDES: [usize; 5] = [1, 2, 1, 1, 1];

#[derive(Debug, Clone)]
enum StepEncoder {
    Dense(Mlp),
    Conv { layers: Vec<Conv2d>, proj: Linear },
}

/// Discriminative sequence classifier (`feedforward` or `recurrent`).
#[derive(Debug, Clone)]
pub struct DiscriminativeNet {
    cfg: ModelConfig,
    store: ParamStore,
    act: Activation,
    encoder: StepEncoder,
    gru: Option<GruCell>,
    head: Linear,
}

impl DiscriminativeNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let recurrent = match cfg.kind {
            ModelKind::Feedforward => false,
            ModelKind::Recurrent => true,
            other => {
                return Err(Error::Contract(format!(
                    "'{}' is not a discriminative model",
                    other.name()
                )))
            }
        };
        let w = cfg.baseline_width.unwrap_or(cfg.encoder_width);
        if w == 0 {
            return Err(Error::Config(
                "model.baseline_width must be positive".into(),
            ));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let act = cfg.nonlinearity.activation();
        let encoder = match cfg.observation {
            ObservationKind::Vector { dim } => {
                let widths: Vec<usize> = std::iter::once(dim)
                    .chain(std::iter::repeat_n(w, cfg.encoder_depth))
                    .collect();
                StepEncoder::Dense(Mlp::new(
                    &mut store, "encoder", &widths, act, true, &mut rng,
                ))
            }
            ObservationKind::Image { height, width } => {
                let mut layers = Vec::new();
                let (mut c, mut h, mut wd) = (1, height, width);
                for (i, (&out, &stride)) in
                    cfg.conv_channels.iter().zip(&ENCODER_STRIDES).enumerate()
                {
                    let geom = ConvGeom {
                        in_channels: c,
                        out_channels: out,
                        in_h: h,
                        in_w: wd,
                        kernel: 3,
                        stride,
                        pad: 1,
                    };
                    layers.push(Conv2d::new(
                        &mut store,
                        &format!("encoder.conv{i}"),
                        geom,
                        &mut rng,
                    ));
                    (c, h, wd) = (out, geom.out_h(), geom.out_w());
                }
                let proj = Linear::new(&mut store, "encoder.proj", c * h * wd, w, &mut rng);
                StepEncoder::Conv { layers, proj }
            }
        };
        let gru = recurrent.then(|| GruCell::new(&mut store, "aggregator", w, w, &mut rng));
        let head = Linear::with_gain(&mut store, "classifier", w, 1, 0.5, &mut rng);
        Ok(Self {
            cfg,
            store,
            act,
            encoder,
            gru,
            head,
        })
    }

    pub fn width(&self) -> usize {
        self.cfg.baseline_width.unwrap_or(self.cfg.encoder_width)
    }

    fn encode<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        match &self.encoder {
            StepEncoder::Dense(mlp) => mlp.forward(tape, &self.store, x),
            StepEncoder::Conv { layers, proj } => {
                let mut h = x;
                for layer in layers {
                    h = layer.forward(tape, &self.store, h).relu();
                }
                self.act.apply(proj.forward(tape, &self.store, h))
            }
        }
    }

    /// Label logits, `(n, 1)`.
    pub fn logits<'t>(&self, tape: &'t Tape, batch: &SeqBatch) -> Var<'t> {
        let feats: Vec<Var<'t>> = batch
            .steps
            .iter()
            .map(|s| self.encode(tape, tape.constant(s.x.clone())))
            .collect();
        let pooled = match &self.gru {
            None => {
                let mut acc = feats[0];
                for f in &feats[1..] {
                    acc = acc + *f;
                }
                acc * (1.0 / feats.len() as f64)
            }
            Some(gru) => {
                let mut h = tape.constant(Array2::zeros((batch.len(), self.width())));
                for f in &feats {
                    h = gru.forward(tape, &self.store, *f, h);
                }
                h
            }
        };
        self.head.forward(tape, &self.store, pooled)
    }
}

/// Any trainable model selected by `model.kind`.
#[derive(Debug, Clone)]
pub enum Model {
    Generative(SeqVaeNet),
    Discriminative(DiscriminativeNet),
}

/// Batch loss on a tape with per-sequence objective values.
#[derive(Debug)]
pub struct LossGraph<'t> {
    pub loss: Var<'t>,
    /// Per-sequence objective (`total` for generative models, label
    /// log-likelihood otherwise).
    pub totals: Vec<f64>,
    /// Batch means of the itemised terms.
    pub metrics: BTreeMap<String, f64>,
    pub breakdowns: Vec<ElboBreakdown>,
}

impl Model {
    /// Builds the model for `cfg.kind`. Comparison models without an explicit
    /// `baseline_width` get the width matching the full model's budget.
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        if cfg.kind != ModelKind::CausalHmm && cfg.baseline_width.is_none() {
            cfg.baseline_width = Some(budget_width(&cfg)?);
        }
        Self::build_exact(cfg)
    }

    fn build_exact(cfg: ModelConfig) -> Result<Self> {
        match cfg.kind {
            ModelKind::CausalHmm => SeqVaeNet::new(cfg).map(Model::Generative),
            ModelKind::SeqVae | ModelKind::SeqVaeAtt => {
                let mut inner = cfg;
                if let Some(w) = inner.baseline_width {
                    inner.encoder_width = w;
                }
                SeqVaeNet::new(inner).map(Model::Generative)
            }
            ModelKind::Feedforward | ModelKind::Recurrent => {
                DiscriminativeNet::new(cfg).map(Model::Discriminative)
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Generative(n) => n.config(),
            Model::Discriminative(n) => &n.cfg,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Model::Generative(n) => n.store(),
            Model::Discriminative(n) => &n.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Generative(n) => n.store_mut(),
            Model::Discriminative(n) => &mut n.store,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.store().num_scalars()
    }

    pub fn as_generative(&self) -> Option<&SeqVaeNet> {
        match self {
            Model::Generative(n) => Some(n),
            Model::Discriminative(_) => None,
        }
    }

    /// Loss to minimise: `-mean(total)` for generative models, mean binary
    /// cross-entropy otherwise.
    pub fn loss<'t>(
        &self,
        tape: &'t Tape,
        batch: &SeqBatch,
        opts: &ObjectiveOptions,
        noise: &mut dyn NoiseSource,
    ) -> Result<LossGraph<'t>> {
        match self {
            Model::Generative(net) => {
                let g = objective_graph(net, tape, batch, opts, noise)?;
                let totals = g.breakdowns.iter().map(|b| b.total).collect();
                let mut metrics = BTreeMap::new();
                for b in &g.breakdowns {
                    for (k, v) in b.to_metrics() {
                        *metrics.entry(k).or_insert(0.0) += v / g.breakdowns.len() as f64;
                    }
                }
                Ok(LossGraph {
                    loss: g.loss,
                    totals,
                    metrics,
                    breakdowns: g.breakdowns,
                })
            }
            Model::Discriminative(net) => {
                if batch.is_empty() {
                    return Err(Error::Contract("empty batch".into()));
                }
                let y = tape.constant(batch.signed_labels());
                let ll = (net.logits(tape, batch) * y).log_sigmoid();
                let totals: Vec<f64> = ll.value().column(0).to_vec();
                let mean = totals.iter().sum::<f64>() / totals.len() as f64;
                let metrics = BTreeMap::from([
                    ("predictive_logprob".to_string(), mean),
                    ("total".to_string(), mean),
                ]);
                Ok(LossGraph {
                    loss: -(ll * opts.classification_weight).mean(),
                    totals,
                    metrics,
                    breakdowns: Vec::new(),
                })
            }
        }
    }

    /// `P(y = +1)` per sequence. Generative models average over `n_mc`
    /// posterior rollouts; discriminative ones ignore `n_mc` and `noise`.
    pub fn predict_proba(
        &self,
        batch: &SeqBatch,
        n_mc: usize,
        noise: &mut dyn NoiseSource,
    ) -> Vec<f64> {
        match self {
            Model::Generative(net) => net.predict_proba(batch, n_mc, noise),
            Model::Discriminative(net) => {
                let tape = Tape::new();
                net.logits(&tape, batch)
                    .sigmoid()
                    .value()
                    .column(0)
                    .to_vec()
            }
        }
    }
}

/// Width giving a comparison model the parameter count closest to the full
/// model built from the same configuration.
pub fn budget_width(cfg: &ModelConfig) -> Result<usize> {
    let mut full_cfg = cfg.clone();
    full_cfg.kind = ModelKind::CausalHmm;
    full_cfg.baseline_width = None;
    let target = SeqVaeNet::new(full_cfg)?.num_parameters() as f64;
    let count = |w: usize| -> Result<f64> {
        let mut c = cfg.clone();
        c.baseline_width = Some(w);
        Ok(Model::build_exact(c)?.num_parameters() as f64)
    };
    let (mut lo, mut hi) = (1usize, 1usize);
    while count(hi)? < target {
        lo = hi;
        hi *= 2;
        if hi > 1 << 14 {
            return Err(Error::Config(
                "no comparison width reaches the parameter budget".into(),
            ));
        }
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if count(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = if (count(lo)? - target).abs() <= (count(hi)? - target).abs() {
        lo
    } else {
        hi
    };
    let rel = (count(best)? - target).abs() / target;
    if rel > BUDGET_TOLERANCE {
        return Err(Error::Config(format!(
            "closest '{}' width {best} misses the parameter budget by {:.1}%",
            cfg.kind.name(),
            100.0 * rel
        )));
    }
    Ok(best)
}
