use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ObservationKind;

/// Which network a configuration builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Three latent blocks `s`, `v`, `z`; classifier on `(s, v)`, clinical decoder on `v`.
    #[default]
    CausalHmm,
    /// Per-step encoder, mean pooled over steps, classifier head.
    Feedforward,
    /// Per-step encoder, GRU over steps, classifier head.
    Recurrent,
    /// One undivided latent; no clinical or attribute channels.
    SeqVae,
    /// One undivided latent with clinical decoder and attribute-conditioned prior.
    SeqVaeAtt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::CausalHmm,
        ModelKind::Feedforward,
        ModelKind::Recurrent,
        ModelKind::SeqVae,
        ModelKind::SeqVaeAtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CausalHmm => "causal_hmm",
            ModelKind::Feedforward => "feedforward",
            ModelKind::Recurrent => "recurrent",
            ModelKind::SeqVae => "seq_vae",
            ModelKind::SeqVaeAtt => "seq_vae_att",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model.kind '{s}'")))
    }

    pub fn is_generative(self) -> bool {
        !matches!(self, ModelKind::Feedforward | ModelKind::Recurrent)
    }
}

/// Variance handling of the Gaussian decoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecoderVariance {
    /// One global scalar for every output coordinate.
    Fixed { variance: f64 },
}

impl Default for DecoderVariance {
    fn default() -> Self {
        DecoderVariance::Fixed { variance: 1.0 }
    }
}

impl DecoderVariance {
    pub fn variance(&self) -> f64 {
        match *self {
            DecoderVariance::Fixed { variance } => variance,
        }
    }
}

/// How the latent state before the first step is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `h_0 = 0`; each prior cell starts from a learned carry vector.
    #[default]
    ZeroLatentLearnedCarry,
}

/// Pointwise nonlinearity of the dense stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Tanh,
    Softplus,
    /// Linear stacks; used for closed-form checks.
    Identity,
}

impl Nonlinearity {
    pub fn activation(self) -> chmm_autodiff::Activation {
        match self {
            Nonlinearity::Tanh => chmm_autodiff::Activation::Tanh,
            Nonlinearity::Softplus => chmm_autodiff::Activation::Softplus,
            Nonlinearity::Identity => chmm_autodiff::Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default = "d8")]
    pub d_s: usize,
    #[serde(default = "d8")]
    pub d_v: usize,
    #[serde(default = "d8")]
    pub d_z: usize,
    pub d_a: usize,
    pub d_b: usize,
    pub observation: ObservationKind,
    /// Hidden width of each prior GRU cell.
    #[serde(default = "d32")]
    pub prior_hidden: usize,
    /// Width of the observation encoder (and of the vector decoder).
    #[serde(default = "d128")]
    pub encoder_width: usize,
    /// Dense layers of the vector encoder and decoder.
    #[serde(default = "d3")]
    pub encoder_depth: usize,
    /// Width of the clinical and attribute encoders.
    #[serde(default = "d16")]
    pub attribute_width: usize,
    /// Width of the posterior trunk that joins features with `h_{t-1}`.
    #[serde(default = "d64")]
    pub posterior_hidden: usize,
    /// Channels of the five convolutional layers (image kind).
    #[serde(default = "default_channels")]
    pub conv_channels: Vec<usize>,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub decoder_variance: DecoderVariance,
    #[serde(default = "d10f")]
    pub log_var_clamp: f64,
    #[serde(default)]
    pub initial_state: InitialState,
    /// Width override used by the comparison models to meet a parameter budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_width: Option<usize>,
    #[serde(default)]
    pub init_seed: u64,
}

fn d3() -> usize {
    3
}
fn d8() -> usize {
    8
}
fn d16() -> usize {
    16
}
fn d32() -> usize {
    32
}
fn d64() -> usize {
    64
}
fn d128() -> usize {
    128
}
fn d10f() -> f64 {
    10.0
}
fn default_channels() -> Vec<usize> {
    vec![8, 8, 16, 16, 16]
}

impl ModelConfig {
    /// Defaults for the given data shapes.
    pub fn new(d_a: usize, d_b: usize, observation: ObservationKind) -> Self {
        Self {
            kind: ModelKind::CausalHmm,
            d_s: 8,
            d_v: 8,
            d_z: 8,
            d_a,
            d_b,
            observation,
            prior_hidden: 32,
            encoder_width: 128,
            encoder_depth: 3,
            attribute_width: 16,
            posterior_hidden: 64,
            conv_channels: default_channels(),
            nonlinearity: Nonlinearity::Tanh,
            decoder_variance: DecoderVariance::default(),
            log_var_clamp: 10.0,
            initial_state: InitialState::default(),
            baseline_width: None,
            init_seed: 0,
        }
    }

    pub fn d_x(&self) -> usize {
        self.observation.len()
    }

    pub fn d_h(&self) -> usize {
        self.d_s + self.d_v + self.d_z
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.d_s", self.d_s),
            ("model.d_v", self.d_v),
            ("model.d_z", self.d_z),
            ("model.d_a", self.d_a),
            ("model.d_b", self.d_b),
            ("model.prior_hidden", self.prior_hidden),
            ("model.encoder_width", self.encoder_width),
            ("model.encoder_depth", self.encoder_depth),
            ("model.attribute_width", self.attribute_width),
            ("model.posterior_hidden", self.posterior_hidden),
            ("observation size", self.d_x()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.decoder_variance.variance() <= 0.0 || !self.decoder_variance.variance().is_finite()
        {
            return Err(Error::Config(
                "model.decoder_variance.variance must be positive".into(),
            ));
        }
        if !(self.log_var_clamp > 0.0) {
            return Err(Error::Config("model.log_var_clamp must be positive".into()));
        }
        if let ObservationKind::Image { height, width } = self.observation {
            if self.conv_channels.len() != 5 || self.conv_channels.contains(&0) {
                return Err(Error::Config(
                    "model.conv_channels must list five positive channel counts".into(),
                ));
            }
            if height % 4 != 0 || width % 4 != 0 || height < 4 || width < 4 {
                return Err(Error::Config(format!(
                    "image size {height}x{width} must be a positive multiple of 4"
                )));
            }
        }
        Ok(())
    }
}
