//! Networks of the sequential variational model.
//!
//! The same code serves the full three-block model and the single-block
//! comparison models; a [`LatentLayout`] decides how many latent blocks
//! exist, which of them feed the classifier and which feed the clinical
//! decoder.

use chmm_autodiff::{
    Activation, Conv2d, ConvGeom, ConvTranspose2d, GruCell, Linear, Matrix, Mlp, ParamId,
    ParamStore, Tape, Var,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::SeqBatch;
use super::config::{ModelConfig, ModelKind};
use super::DiagGaussian;
use crate::error::{Error, Result};
use crate::rng::NoiseSource;
use crate::types::{LatentState, ObservationKind, ObservationStep, SequenceSample};

/// Latent blocks of a model and their roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentLayout {
    pub names: Vec<&'static str>,
    pub dims: Vec<usize>,
    /// Blocks read by the classifier, in order.
    pub classifier: Vec<usize>,
    /// Blocks read by the clinical decoder, in order.
    pub clinical: Vec<usize>,
    /// Whether `A` and `B` enter the encoder and `B` the prior.
    pub attributes: bool,
}

impl LatentLayout {
    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg.kind {
            ModelKind::CausalHmm => Self {
                names: vec!["s", "v", "z"],
                dims: vec![cfg.d_s, cfg.d_v, cfg.d_z],
                classifier: vec![0, 1],
                clinical: vec![1],
                attributes: true,
            },
            ModelKind::SeqVae => Self {
                names: vec!["h"],
                dims: vec![cfg.d_h()],
                classifier: vec![0],
                clinical: vec![],
                attributes: false,
            },
            ModelKind::SeqVaeAtt => Self {
                names: vec!["h"],
                dims: vec![cfg.d_h()],
                classifier: vec![0],
                clinical: vec![0],
                attributes: true,
            },
            other => {
                return Err(Error::Config(format!(
                    "model kind '{}' has no latent layout",
                    other.name()
                )))
            }
        })
    }

    pub fn total(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn classifier_dim(&self) -> usize {
        self.classifier.iter().map(|&i| self.dims[i]).sum()
    }

    pub fn clinical_dim(&self) -> usize {
        self.clinical.iter().map(|&i| self.dims[i]).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| *n == name)
    }
}

/// Gaussian whose parameters live on a tape; rows are batch entries.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVar<'t> {
    pub mean: Var<'t>,
    pub log_var: Var<'t>,
}

impl<'t> GaussianVar<'t> {
    /// Pathwise sample `mean + exp(log_var / 2) * eps`.
    pub fn sample(&self, eps: Var<'t>) -> Var<'t> {
        self.mean + (self.log_var * 0.5).exp() * eps
    }

    /// Row `r` as a value-level distribution.
    pub fn row(&self, r: usize) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean.with_value(|m| m.row(r).to_vec()),
            log_var: self.log_var.with_value(|m| m.row(r).to_vec()),
        }
    }
}

/// Encoded observation features of one step.
#[derive(Debug, Clone, Copy)]
pub struct EncodedStep<'t> {
    pub features: Var<'t>,
    /// Activation of the last convolution layer (image kind only).
    pub last_conv: Option<Var<'t>>,
}

/// Recurrent carries of the prior cells, one row vector per block.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCarry(pub Vec<Vec<f64>>);

/// Output of one posterior rollout step.
#[derive(Debug, Clone)]
pub struct RolloutStep<'t> {
    pub posterior: Vec<GaussianVar<'t>>,
    pub sample: Vec<Var<'t>>,
    pub encoded: EncodedStep<'t>,
}

#[derive(Debug, Clone)]
enum XEncoder {
    Dense(Mlp),
    Conv { layers: Vec<Conv2d>, proj: Linear },
}

#[derive(Debug, Clone)]
enum XDecoder {
    Dense(Mlp),
    Deconv {
        proj: Linear,
        layers: Vec<ConvTranspose2d>,
    },
}

#[derive(Debug, Clone)]
struct PriorCell {
    b_enc: Option<Mlp>,
    gru: GruCell,
    mean: Linear,
    log_var: Linear,
    init: ParamId,
}

#[derive(Debug, Clone)]
struct Head {
    mean: Linear,
    log_var: Linear,
}

/// Factorised recurrent priors, per-step posterior encoder, observation and
/// clinical decoders and the final-step classifier.
#[derive(Debug, Clone)]
pub struct SeqVaeNet {
    cfg: ModelConfig,
    layout: LatentLayout,
    store: ParamStore,
    act: Activation,
    x_enc: XEncoder,
    a_enc: Option<Mlp>,
    b_enc: Option<Mlp>,
    trunk: Linear,
    heads: Vec<Head>,
    priors: Vec<PriorCell>,
    x_dec: XDecoder,
    a_dec: Option<Mlp>,
    classifier: Linear,
}

/// Stride pattern of the five encoder convolutions.
const ENCODER_STRIDES: [usize; 5] = [1, 2, 1, 1, 1];

impl SeqVaeNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = LatentLayout::for_config(&cfg)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let act = cfg.nonlinearity.activation();
        let w = cfg.encoder_width;
        let aw = cfg.attribute_width;

        let x_enc = match cfg.observation {
            ObservationKind::Vector { dim } => {
                let widths: Vec<usize> = std::iter::once(dim)
                    .chain(std::iter::repeat_n(w, cfg.encoder_depth))
                    .collect();
                XEncoder::Dense(Mlp::new(
                    &mut store,
                    "posterior.x_enc",
                    &widths,
                    act,
                    true,
                    &mut rng,
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
                        &format!("posterior.x_enc.conv{i}"),
                        geom,
                        &mut rng,
                    ));
                    (c, h, wd) = (out, geom.out_h(), geom.out_w());
                }
                let proj = Linear::new(&mut store, "posterior.x_enc.proj", c * h * wd, w, &mut rng);
                XEncoder::Conv { layers, proj }
            }
        };
        let (a_enc, b_enc) = if layout.attributes {
            (
                Some(Mlp::new(
                    &mut store,
                    "posterior.a_enc",
                    &[cfg.d_a, aw],
                    act,
                    true,
                    &mut rng,
                )),
                Some(Mlp::new(
                    &mut store,
                    "posterior.b_enc",
                    &[cfg.d_b, aw],
                    act,
                    true,
                    &mut rng,
                )),
            )
        } else {
            (None, None)
        };
        let feat_dim = w + if layout.attributes { 2 * aw } else { 0 };
        let trunk = Linear::new(
            &mut store,
            "posterior.trunk",
            feat_dim + layout.total(),
            cfg.posterior_hidden,
            &mut rng,
        );
        let heads = layout
            .names
            .iter()
            .zip(&layout.dims)
            .map(|(name, &d)| Head {
                mean: Linear::new(
                    &mut store,
                    &format!("posterior.{name}.mean"),
                    cfg.posterior_hidden,
                    d,
                    &mut rng,
                ),
                log_var: Linear::with_gain(
                    &mut store,
                    &format!("posterior.{name}.log_var"),
                    cfg.posterior_hidden,
                    d,
                    0.1,
                    &mut rng,
                ),
            })
            .collect();
        let priors = layout
            .names
            .iter()
            .zip(&layout.dims)
            .map(|(name, &d)| {
                let b_enc = layout.attributes.then(|| {
                    Mlp::new(
                        &mut store,
                        &format!("prior.{name}.b_enc"),
                        &[cfg.d_b, aw],
                        act,
                        true,
                        &mut rng,
                    )
                });
                let in_dim = d + if layout.attributes { aw } else { 0 };
                let gru = GruCell::new(
                    &mut store,
                    &format!("prior.{name}.gru"),
                    in_dim,
                    cfg.prior_hidden,
                    &mut rng,
                );
                let mean = Linear::new(
                    &mut store,
                    &format!("prior.{name}.mean"),
                    cfg.prior_hidden,
                    d,
                    &mut rng,
                );
                let log_var = Linear::with_gain(
                    &mut store,
                    &format!("prior.{name}.log_var"),
                    cfg.prior_hidden,
                    d,
                    0.1,
                    &mut rng,
                );
                let init = store.add(
                    format!("prior.{name}.init_carry"),
                    Array2::zeros((1, cfg.prior_hidden)),
                );
                PriorCell {
                    b_enc,
                    gru,
                    mean,
                    log_var,
                    init,
                }
            })
            .collect();
        let d_h = layout.total();
        let x_dec = match cfg.observation {
            ObservationKind::Vector { dim } => {
                let widths: Vec<usize> = std::iter::once(d_h)
                    .chain(std::iter::repeat_n(w, cfg.encoder_depth - 1))
                    .chain(std::iter::once(dim))
                    .collect();
                XDecoder::Dense(Mlp::new(
                    &mut store,
                    "decoder.x",
                    &widths,
                    act,
                    false,
                    &mut rng,
                ))
            }
            ObservationKind::Image { height, width } => {
                let ch = &cfg.conv_channels;
                let (h4, w4) = (height / 4, width / 4);
                let proj =
                    Linear::new(&mut store, "decoder.x.proj", d_h, ch[4] * h4 * w4, &mut rng);
                // (in, out, kernel, stride)
                let plan = [
                    (ch[4], ch[3], 3, 1),
                    (ch[3], ch[2], 4, 2),
                    (ch[2], ch[1], 3, 1),
                    (ch[1], ch[0], 4, 2),
                    (ch[0], 1, 3, 1),
                ];
                let mut hw = (h4, w4);
                let mut layers = Vec::new();
                for (i, &(cin, cout, k, s)) in plan.iter().enumerate() {
                    let layer = ConvTranspose2d::new(
                        &mut store,
                        &format!("decoder.x.deconv{i}"),
                        cin,
                        cout,
                        hw,
                        k,
                        s,
                        1,
                        &mut rng,
                    );
                    hw = layer.out_hw();
                    layers.push(layer);
                }
                debug_assert_eq!(hw, (height, width));
                XDecoder::Deconv { proj, layers }
            }
        };
        let a_dec = (!layout.clinical.is_empty()).then(|| {
            Mlp::new(
                &mut store,
                "decoder.a",
                &[layout.clinical_dim(), aw, cfg.d_a],
                act,
                false,
                &mut rng,
            )
        });
        let classifier = Linear::with_gain(
            &mut store,
            "classifier",
            layout.classifier_dim(),
            1,
            0.5,
            &mut rng,
        );
        Ok(Self {
            cfg,
            layout,
            store,
            act,
            x_enc,
            a_enc,
            b_enc,
            trunk,
            heads,
            priors,
            x_dec,
            a_dec,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Identity of the classifier parameters. Both the generative label
    /// model and the inference label model resolve to this one layer.
    pub fn classifier_params(&self) -> (ParamId, ParamId) {
        (self.classifier.weight, self.classifier.bias)
    }

    fn clamp_lv<'t>(&self, v: Var<'t>) -> Var<'t> {
        v.clamp(-self.cfg.log_var_clamp, self.cfg.log_var_clamp)
    }

    // ----- graph-level pieces -------------------------------------------------

    /// Encodes `x_t`, `A_t`, `B_{t-1}` into one feature row per sequence.
    pub fn encode_step<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        a: Var<'t>,
        b: Var<'t>,
    ) -> EncodedStep<'t> {
        let (fx, last_conv) = match &self.x_enc {
            XEncoder::Dense(mlp) => (mlp.forward(tape, &self.store, x), None),
            XEncoder::Conv { layers, proj } => {
                let mut hcur = x;
                for layer in layers {
                    hcur = layer.forward(tape, &self.store, hcur).relu();
                }
                (
                    self.act.apply(proj.forward(tape, &self.store, hcur)),
                    Some(hcur),
                )
            }
        };
        let features = match (&self.a_enc, &self.b_enc) {
            (Some(ae), Some(be)) => tape.concat(&[
                fx,
                ae.forward(tape, &self.store, a),
                be.forward(tape, &self.store, b),
            ]),
            _ => fx,
        };
        EncodedStep {
            features,
            last_conv,
        }
    }

    /// `q(h_t | u_t, h_{t-1})` per block.
    pub fn posterior<'t>(
        &self,
        tape: &'t Tape,
        features: Var<'t>,
        prev: &[Var<'t>],
    ) -> Vec<GaussianVar<'t>> {
        let mut parts = vec![features];
        parts.extend_from_slice(prev);
        let hid = self
            .act
            .apply(self.trunk.forward(tape, &self.store, tape.concat(&parts)));
        self.heads
            .iter()
            .map(|h| GaussianVar {
                mean: h.mean.forward(tape, &self.store, hid),
                log_var: self.clamp_lv(h.log_var.forward(tape, &self.store, hid)),
            })
            .collect()
    }

    pub fn zero_latent<'t>(&self, tape: &'t Tape, rows: usize) -> Vec<Var<'t>> {
        self.layout
            .dims
            .iter()
            .map(|&d| tape.constant(Array2::zeros((rows, d))))
            .collect()
    }

    pub fn initial_carry<'t>(&self, tape: &'t Tape, rows: usize) -> Vec<Var<'t>> {
        self.priors
            .iter()
            .map(|p| tape.param(&self.store, p.init).tile_rows(rows))
            .collect()
    }

    /// `p(o_t | o_{t-1}, B_{t-1})` for every block from its own cell.
    pub fn prior<'t>(
        &self,
        tape: &'t Tape,
        prev: &[Var<'t>],
        b: Var<'t>,
        carry: &[Var<'t>],
    ) -> (Vec<GaussianVar<'t>>, Vec<Var<'t>>) {
        let mut dists = Vec::with_capacity(self.priors.len());
        let mut next = Vec::with_capacity(self.priors.len());
        for (k, cell) in self.priors.iter().enumerate() {
            let input = match &cell.b_enc {
                Some(be) => tape.concat(&[prev[k], be.forward(tape, &self.store, b)]),
                None => prev[k],
            };
            let c = cell.gru.forward(tape, &self.store, input, carry[k]);
            dists.push(GaussianVar {
                mean: cell.mean.forward(tape, &self.store, c),
                log_var: self.clamp_lv(cell.log_var.forward(tape, &self.store, c)),
            });
            next.push(c);
        }
        (dists, next)
    }

    /// Mean of `p(x_t | h_t)`; consumes every block.
    pub fn decode_x<'t>(&self, tape: &'t Tape, blocks: &[Var<'t>]) -> Var<'t> {
        let h = tape.concat(blocks);
        match &self.x_dec {
            XDecoder::Dense(mlp) => mlp.forward(tape, &self.store, h),
            XDecoder::Deconv { proj, layers } => {
                let mut cur = proj.forward(tape, &self.store, h).relu();
                let n = layers.len();
                for (i, layer) in layers.iter().enumerate() {
                    cur = layer.forward(tape, &self.store, cur);
                    if i + 1 < n {
                        cur = cur.relu();
                    }
                }
                cur
            }
        }
    }

    /// Mean of `p(A_t | .)` from the clinical blocks only.
    pub fn decode_a<'t>(&self, tape: &'t Tape, blocks: &[Var<'t>]) -> Option<Var<'t>> {
        let dec = self.a_dec.as_ref()?;
        let parts: Vec<Var<'t>> = self.layout.clinical.iter().map(|&i| blocks[i]).collect();
        Some(dec.forward(tape, &self.store, tape.concat(&parts)))
    }

    /// Logit of `y = +1` from the classifier blocks only.
    pub fn class_logit<'t>(&self, tape: &'t Tape, blocks: &[Var<'t>]) -> Var<'t> {
        let parts: Vec<Var<'t>> = self.layout.classifier.iter().map(|&i| blocks[i]).collect();
        self.classifier
            .forward(tape, &self.store, tape.concat(&parts))
    }

    /// Encodes every step of a batch as constants.
    pub fn encode_batch<'t>(&self, tape: &'t Tape, batch: &SeqBatch) -> Vec<EncodedStep<'t>> {
        batch
            .steps
            .iter()
            .map(|s| {
                self.encode_step(
                    tape,
                    tape.constant(s.x.clone()),
                    tape.constant(s.a.clone()),
                    tape.constant(s.b.clone()),
                )
            })
            .collect()
    }

    /// Posterior-only rollout over pre-encoded steps, with `k` samples per
    /// sequence. Row `r * n + i` belongs to sequence `i`.
    pub fn posterior_rollout<'t>(
        &self,
        tape: &'t Tape,
        encoded: &[EncodedStep<'t>],
        k: usize,
        noise: &mut dyn NoiseSource,
    ) -> Vec<RolloutStep<'t>> {
        let Some(first) = encoded.first() else {
            return Vec::new();
        };
        let rows = first.features.rows() * k;
        let mut prev = self.zero_latent(tape, rows);
        let mut out = Vec::with_capacity(encoded.len());
        for enc in encoded {
            let feats = if k == 1 {
                enc.features
            } else {
                enc.features.tile_rows(k)
            };
            let posterior = self.posterior(tape, feats, &prev);
            let sample: Vec<Var<'t>> = posterior
                .iter()
                .zip(&self.layout.dims)
                .map(|(g, &d)| g.sample(tape.constant(noise.standard_normal(rows, d))))
                .collect();
            prev = sample.clone();
            out.push(RolloutStep {
                posterior,
                sample,
                encoded: *enc,
            });
        }
        out
    }

    /// Mean over `k` rollouts of `P(y = +1)` at the last step of each sequence.
    pub fn predict_proba(
        &self,
        batch: &SeqBatch,
        k: usize,
        noise: &mut dyn NoiseSource,
    ) -> Vec<f64> {
        let tape = Tape::new();
        let enc = self.encode_batch(&tape, batch);
        let steps = self.posterior_rollout(&tape, &enc, k, noise);
        let last = steps.last().expect("non-empty batch");
        let p = self.class_logit(&tape, &last.sample).sigmoid().value();
        let n = batch.len();
        (0..n)
            .map(|i| (0..k).map(|r| p[[r * n + i, 0]]).sum::<f64>() / k as f64)
            .collect()
    }

    /// Posterior means per step and block under zero noise, `[step][block]`
    /// with one row per sequence.
    pub fn posterior_means(&self, batch: &SeqBatch) -> Vec<Vec<Matrix>> {
        let tape = Tape::new();
        let enc = self.encode_batch(&tape, batch);
        self.posterior_rollout(&tape, &enc, 1, &mut crate::rng::ZeroNoise)
            .iter()
            .map(|s| s.posterior.iter().map(|g| g.mean.value()).collect())
            .collect()
    }

    // ----- value-level operations ---------------------------------------------

    fn check_blocks(&self, blocks: &[Vec<f64>]) -> Result<()> {
        if blocks.len() != self.layout.dims.len()
            || blocks
                .iter()
                .zip(&self.layout.dims)
                .any(|(b, &d)| b.len() != d)
        {
            return Err(Error::Contract(format!(
                "latent blocks {:?} do not match layout {:?}",
                blocks.iter().map(Vec::len).collect::<Vec<_>>(),
                self.layout.dims
            )));
        }
        Ok(())
    }

    fn row<'t>(tape: &'t Tape, v: &[f64]) -> Var<'t> {
        tape.constant(Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape"))
    }

    fn check_obs(&self, obs: &ObservationStep) -> Result<()> {
        let (da, db) = if self.layout.attributes {
            (self.cfg.d_a, self.cfg.d_b)
        } else {
            (obs.a.len(), obs.b_prev.len())
        };
        if obs.x.len() != self.cfg.d_x() || obs.a.len() != da || obs.b_prev.len() != db {
            return Err(Error::Contract(format!(
                "observation dims (x {}, A {}, B {}) do not match config (x {}, A {}, B {})",
                obs.x.len(),
                obs.a.len(),
                obs.b_prev.len(),
                self.cfg.d_x(),
                self.cfg.d_a,
                self.cfg.d_b
            )));
        }
        Ok(())
    }

    fn to_diag(&self, g: &GaussianVar<'_>) -> DiagGaussian {
        g.row(0)
    }

    /// Learned initial carry.
    pub fn initial_prior_carry(&self) -> PriorCarry {
        PriorCarry(
            self.priors
                .iter()
                .map(|p| self.store.get(p.init).row(0).to_vec())
                .collect(),
        )
    }

    /// One prior step for a single sequence.
    pub fn prior_step(
        &self,
        prev: &[Vec<f64>],
        b_prev: &[f64],
        carry: &PriorCarry,
    ) -> Result<(Vec<DiagGaussian>, PriorCarry)> {
        self.check_blocks(prev)?;
        if self.layout.attributes && b_prev.len() != self.cfg.d_b {
            return Err(Error::Contract(format!(
                "B has {} entries, expected {}",
                b_prev.len(),
                self.cfg.d_b
            )));
        }
        if carry.0.len() != self.priors.len()
            || carry.0.iter().any(|c| c.len() != self.cfg.prior_hidden)
        {
            return Err(Error::Contract("prior carry has the wrong shape".into()));
        }
        let tape = Tape::new();
        let prev_v: Vec<Var> = prev.iter().map(|p| Self::row(&tape, p)).collect();
        let carry_v: Vec<Var> = carry.0.iter().map(|c| Self::row(&tape, c)).collect();
        let b = if self.layout.attributes {
            Self::row(&tape, b_prev)
        } else {
            tape.constant(Array2::zeros((1, 0)))
        };
        let (dists, next) = self.prior(&tape, &prev_v, b, &carry_v);
        Ok((
            dists.iter().map(|g| self.to_diag(g)).collect(),
            PriorCarry(next.iter().map(|c| c.value().row(0).to_vec()).collect()),
        ))
    }

    /// One posterior step for a single sequence.
    pub fn posterior_step(
        &self,
        prev: &[Vec<f64>],
        obs: &ObservationStep,
    ) -> Result<Vec<DiagGaussian>> {
        self.check_blocks(prev)?;
        self.check_obs(obs)?;
        let tape = Tape::new();
        let enc = self.encode_step(
            &tape,
            Self::row(&tape, &obs.x),
            Self::row(&tape, &obs.a),
            Self::row(&tape, &obs.b_prev),
        );
        let prev_v: Vec<Var> = prev.iter().map(|p| Self::row(&tape, p)).collect();
        Ok(self
            .posterior(&tape, enc.features, &prev_v)
            .iter()
            .map(|g| self.to_diag(g))
            .collect())
    }

    /// `p(x | h)`: mean from the decoder, fixed variance.
    pub fn decode_image(&self, blocks: &[Vec<f64>]) -> Result<DiagGaussian> {
        self.check_blocks(blocks)?;
        let tape = Tape::new();
        let vars: Vec<Var> = blocks.iter().map(|b| Self::row(&tape, b)).collect();
        let mean = self.decode_x(&tape, &vars).value().row(0).to_vec();
        let lv = self.cfg.decoder_variance.variance().ln();
        Ok(DiagGaussian {
            log_var: vec![lv; mean.len()],
            mean,
        })
    }

    /// `p(A | v)` from the concatenated clinical blocks.
    pub fn decode_clinical(&self, v: &[f64]) -> Result<DiagGaussian> {
        let Some(dec) = &self.a_dec else {
            return Err(Error::Contract("this model has no clinical decoder".into()));
        };
        if v.len() != self.layout.clinical_dim() {
            return Err(Error::Contract(format!(
                "clinical input has {} entries, expected {}",
                v.len(),
                self.layout.clinical_dim()
            )));
        }
        let tape = Tape::new();
        let mean = dec
            .forward(&tape, &self.store, Self::row(&tape, v))
            .value()
            .row(0)
            .to_vec();
        let lv = self.cfg.decoder_variance.variance().ln();
        Ok(DiagGaussian {
            log_var: vec![lv; mean.len()],
            mean,
        })
    }

    /// `P(y = +1 | s, v)`.
    pub fn classify(&self, s: &[f64], v: &[f64]) -> Result<f64> {
        if self.cfg.kind != ModelKind::CausalHmm {
            return Err(Error::Contract(
                "classify(s, v) needs the three-block layout".into(),
            ));
        }
        let mut blocks = vec![s.to_vec(), v.to_vec(), vec![0.0; self.cfg.d_z]];
        if s.len() != self.cfg.d_s || v.len() != self.cfg.d_v {
            return Err(Error::Contract(format!(
                "classifier inputs ({}, {}) expected ({}, {})",
                s.len(),
                v.len(),
                self.cfg.d_s,
                self.cfg.d_v
            )));
        }
        blocks.truncate(3);
        self.classify_blocks(&blocks)
    }

    /// `P(y = +1)` from full latent blocks (only classifier blocks are read).
    pub fn classify_blocks(&self, blocks: &[Vec<f64>]) -> Result<f64> {
        self.check_blocks(blocks)?;
        let tape = Tape::new();
        let vars: Vec<Var> = blocks.iter().map(|b| Self::row(&tape, b)).collect();
        Ok(self.class_logit(&tape, &vars).sigmoid().item())
    }

    /// Posterior rollout of one sequence: samples and distributions per step.
    pub fn rollout_posterior(
        &self,
        seq: &SequenceSample,
        noise: &mut dyn NoiseSource,
    ) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<DiagGaussian>>)> {
        if seq.is_empty() {
            return Err(Error::Contract("sequence length must be >= 1".into()));
        }
        for st in &seq.steps {
            self.check_obs(st)?;
        }
        let batch = SeqBatch::from_samples([seq])?;
        let tape = Tape::new();
        let enc = self.encode_batch(&tape, &batch);
        let steps = self.posterior_rollout(&tape, &enc, 1, noise);
        let samples = steps
            .iter()
            .map(|s| s.sample.iter().map(|v| v.value().row(0).to_vec()).collect())
            .collect();
        let dists = steps
            .iter()
            .map(|s| s.posterior.iter().map(|g| g.row(0)).collect())
            .collect();
        Ok((samples, dists))
    }

    /// Splits a three-block state into layout blocks.
    pub fn blocks_of(state: &LatentState) -> Vec<Vec<f64>> {
        vec![state.s.clone(), state.v.clone(), state.z.clone()]
    }
}
