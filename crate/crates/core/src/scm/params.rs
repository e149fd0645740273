//! Ground-truth structural model parameters and their random construction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::population::{PopulationConfig, PopulationSpec};
use crate::error::{Error, Result};
use crate::linalg::{singular_values, Dense};
use crate::rng::rng_for;
use crate::types::ObservationKind;

/// Sizes of every simulated quantity. `horizon` is `T`: observations cover
/// steps `1..T-1` and the label sits at `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_s: usize,
    pub d_v: usize,
    pub d_z: usize,
    pub d_x: usize,
    pub d_a: usize,
    pub d_b: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn d_h(&self) -> usize {
        self.d_s + self.d_v + self.d_z
    }

    /// Observed steps per sequence, `T - 1`.
    pub fn steps(&self) -> usize {
        self.horizon - 1
    }

    pub fn block(&self, b: Block) -> usize {
        match b {
            Block::S => self.d_s,
            Block::V => self.d_v,
            Block::Z => self.d_z,
        }
    }

    /// `max(d_s, d_v, d_z)`.
    pub fn max_block(&self) -> usize {
        self.d_s.max(self.d_v).max(self.d_z)
    }

    /// Required prototype count `m = d * k + 1` with `k = 2` natural parameters.
    pub fn required_prototypes(&self) -> usize {
        2 * self.max_block() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    S,
    V,
    Z,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::S, Block::V, Block::Z];

    pub fn name(self) -> &'static str {
        match self {
            Block::S => "s",
            Block::V => "v",
            Block::Z => "z",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Conditional Gaussian for one block:
/// `pre = W [o_{t-1}; B_{t-1}] + b`, `mean = pre + gain * tanh(pre)`,
/// `log_var = lv_bias + lv_scale * tanh(V [o_{t-1}; B_{t-1}] + e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTransition {
    pub dim: usize,
    pub weight: Dense,
    pub bias: Vec<f64>,
    pub nonlinearity: f64,
    pub log_var_weight: Dense,
    pub log_var_bias: Vec<f64>,
    pub log_var_offset: f64,
    pub log_var_scale: f64,
}

impl BlockTransition {
    pub fn gaussian(&self, prev: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let input: Vec<f64> = prev.iter().chain(b).copied().collect();
        let pre = self.weight.matvec(&input);
        let mean = pre
            .iter()
            .zip(&self.bias)
            .map(|(p, c)| p + c)
            .map(|p| p + self.nonlinearity * p.tanh())
            .collect();
        let lv = self.log_var_weight.matvec(&input);
        let log_var = lv
            .iter()
            .zip(&self.log_var_bias)
            .map(|(l, e)| self.log_var_offset + self.log_var_scale * (l + e).tanh())
            .collect();
        (mean, log_var)
    }

    fn validate(&self, d_b: usize, what: &str) -> Result<()> {
        self.weight.check_shape(self.dim, self.dim + d_b, what)?;
        self.log_var_weight
            .check_shape(self.dim, self.dim + d_b, what)?;
        if self.bias.len() != self.dim || self.log_var_bias.len() != self.dim {
            return Err(Error::Contract(format!("{what}: bias length")));
        }
        Ok(())
    }
}

/// `out = W [h; tanh(h)] + c` over the concatenated input blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub weight: Dense,
    pub bias: Vec<f64>,
}

impl Emission {
    pub fn features(h: &[f64]) -> Vec<f64> {
        h.iter()
            .copied()
            .chain(h.iter().map(|x| x.tanh()))
            .collect()
    }

    pub fn mean(&self, h: &[f64]) -> Vec<f64> {
        self.weight
            .matvec(&Self::features(h))
            .iter()
            .zip(&self.bias)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// `logit y_T = w_s . s_{T-1} + w_v . v_{T-1} + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHead {
    pub w_s: Vec<f64>,
    pub w_v: Vec<f64>,
    pub bias: f64,
}

impl LabelHead {
    pub fn logit(&self, s: &[f64], v: &[f64]) -> f64 {
        let dot = |w: &[f64], x: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        dot(&self.w_s, s) + dot(&self.w_v, v) + self.bias
    }
}

/// Complete ground-truth model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmParams {
    pub dims: Dims,
    pub observation: ObservationKind,
    pub s: BlockTransition,
    pub v: BlockTransition,
    pub z: BlockTransition,
    /// Multiplies every transition standard deviation.
    pub transition_noise: f64,
    pub emission_x: Emission,
    pub emission_a: Emission,
    pub label: LabelHead,
    pub sigma_x: f64,
    pub sigma_a: f64,
    pub base_population: PopulationSpec,
    pub seed: u64,
}

impl ScmParams {
    pub fn transition(&self, b: Block) -> &BlockTransition {
        match b {
            Block::S => &self.s,
            Block::V => &self.v,
            Block::Z => &self.z,
        }
    }

    /// Checks shapes, positivity, injectivity of the image map and the
    /// prototype count of the base population.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.horizon < 2 {
            return Err(Error::Contract(format!(
                "horizon T must be >= 2, got {}",
                d.horizon
            )));
        }
        if d.d_s == 0 || d.d_v == 0 || d.d_z == 0 || d.d_x == 0 || d.d_b == 0 {
            return Err(Error::Contract(
                "latent, observation and attribute dims must be >= 1".into(),
            ));
        }
        if self.observation.len() != d.d_x {
            return Err(Error::Contract(format!(
                "observation kind has {} entries, d_x = {}",
                self.observation.len(),
                d.d_x
            )));
        }
        for b in Block::ALL {
            let t = self.transition(b);
            if t.dim != d.block(b) {
                return Err(Error::Contract(format!(
                    "transition {} has dim {}",
                    b.name(),
                    t.dim
                )));
            }
            t.validate(d.d_b, &format!("transition {}", b.name()))?;
        }
        if !(self.sigma_x >= 0.0 && self.sigma_a >= 0.0 && self.transition_noise >= 0.0) {
            return Err(Error::Contract("noise scales must be non-negative".into()));
        }
        self.emission_x
            .weight
            .check_shape(d.d_x, 2 * d.d_h(), "emission x")?;
        self.emission_a
            .weight
            .check_shape(d.d_a, 2 * d.d_v, "emission A")?;
        if self.emission_x.bias.len() != d.d_x || self.emission_a.bias.len() != d.d_a {
            return Err(Error::Contract("emission bias length".into()));
        }
        if self.label.w_s.len() != d.d_s
            || self.label.w_v.len() != d.d_v
            || !self.label.bias.is_finite()
        {
            return Err(Error::Contract("label head shape".into()));
        }
        let sv = singular_values(&self.emission_x.weight.to_nalgebra());
        if sv.len() < 2 * d.d_h() || sv[2 * d.d_h() - 1] <= 1e-8 * sv[0].max(1.0) {
            return Err(Error::Precondition(
                "image map is not injective: emission weight lacks full column rank (need d_x >= 2 * d_h)".into(),
            ));
        }
        self.base_population.validate()?;
        if self.base_population.d_b() != d.d_b {
            return Err(Error::Contract(
                "base population attribute count differs from d_B".into(),
            ));
        }
        let m = d.required_prototypes();
        if self.base_population.distinct_prototypes() < m {
            return Err(Error::Precondition(format!(
                "base population has {} distinct prototypes, need at least {m}",
                self.base_population.distinct_prototypes()
            )));
        }
        Ok(())
    }
}

/// Per-block attribute relevance: entry `k` is the magnitude of attribute
/// `k`'s weight in that block's transition mean (sign drawn at random) and
/// scales its weight in the log-variance map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRelevance {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
}

impl Default for AttributeRelevance {
    fn default() -> Self {
        Self {
            s: vec![2.0, 0.02, 0.1],
            v: vec![0.1, 0.02, 1.5],
            z: vec![0.02, 4.0, 0.02],
        }
    }
}

/// User-facing knobs from which [`ScmParams`] are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmConfig {
    pub seed: u64,
    pub horizon: usize,
    pub d_s: usize,
    pub d_v: usize,
    pub d_z: usize,
    pub d_a: usize,
    pub observation: ObservationKind,
    #[serde(default = "d_sigma")]
    pub sigma_x: f64,
    #[serde(default = "d_sigma")]
    pub sigma_a: f64,
    #[serde(default = "d_one")]
    pub transition_noise: f64,
    /// Diagonal of the autoregressive weight of the `s`, `v` and `z` blocks.
    #[serde(default = "d_persistence")]
    pub persistence: [f64; 3],
    /// Scale of the off-diagonal autoregressive weights.
    #[serde(default = "d_coupling")]
    pub coupling: f64,
    #[serde(default = "d_one")]
    pub attribute_gain: f64,
    #[serde(default = "d_nonlinearity")]
    pub nonlinearity: f64,
    #[serde(default = "d_lv_offset")]
    pub log_var_offset: f64,
    #[serde(default = "d_lv_scale")]
    pub log_var_scale: f64,
    /// Emission strength of the `s`, `v` and `z` blocks in `x`.
    #[serde(default = "d_emission_gain")]
    pub emission_gain: [f64; 3],
    /// Standard deviation of the label logit over the base population.
    #[serde(default = "d_label_gain")]
    pub label_gain: f64,
    #[serde(default = "d_half")]
    pub target_rate: f64,
    #[serde(default)]
    pub relevance: AttributeRelevance,
    #[serde(default)]
    pub population: PopulationConfig,
}

fn d_sigma() -> f64 {
    0.1
}
fn d_one() -> f64 {
    1.0
}
fn d_persistence() -> [f64; 3] {
    [0.9, 0.5, 0.1]
}
fn d_coupling() -> f64 {
    0.2
}
fn d_nonlinearity() -> f64 {
    0.5
}
fn d_lv_offset() -> f64 {
    -1.0
}
fn d_lv_scale() -> f64 {
    1.0
}
fn d_emission_gain() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}
fn d_label_gain() -> f64 {
    3.0
}
fn d_half() -> f64 {
    0.5
}

/// Sub-stream tags used when drawing parameters.
const TAG_PARAMS: u64 = 0x5041_5241;
const TAG_CALIBRATE: u64 = 0x4341_4c49;

impl ScmConfig {
    /// The synthetic benchmark: one dimension per block, six time points,
    /// 32-dimensional vector observations.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            horizon: 6,
            d_s: 1,
            d_v: 1,
            d_z: 1,
            observation: ObservationKind::Vector { dim: 32 },
            sigma_x: 0.5,
            ..Self::small(seed)
        }
    }

    /// Small vector-observation configuration used by tests and examples.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            horizon: 4,
            d_s: 2,
            d_v: 2,
            d_z: 2,
            d_a: 4,
            observation: ObservationKind::Vector { dim: 24 },
            sigma_x: d_sigma(),
            sigma_a: d_sigma(),
            transition_noise: 1.0,
            persistence: d_persistence(),
            coupling: d_coupling(),
            attribute_gain: 1.0,
            nonlinearity: d_nonlinearity(),
            log_var_offset: d_lv_offset(),
            log_var_scale: d_lv_scale(),
            emission_gain: d_emission_gain(),
            label_gain: d_label_gain(),
            target_rate: 0.5,
            relevance: AttributeRelevance::default(),
            population: PopulationConfig::default(),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_s: self.d_s,
            d_v: self.d_v,
            d_z: self.d_z,
            d_x: self.observation.len(),
            d_a: self.d_a,
            d_b: super::population::ATTRIBUTE_NAMES.len(),
            horizon: self.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.horizon < 2 {
            return cfg(format!("scm.horizon must be >= 2, got {}", self.horizon));
        }
        if self.d_s == 0 || self.d_v == 0 || self.d_z == 0 || self.d_a == 0 {
            return cfg("scm latent and clinical dims must be >= 1".into());
        }
        let d_h = self.d_s + self.d_v + self.d_z;
        if self.observation.len() < 2 * d_h {
            return cfg(format!(
                "scm observation needs at least 2 * d_h = {} entries, has {}",
                2 * d_h,
                self.observation.len()
            ));
        }
        if let ObservationKind::Image { height, width } = self.observation {
            if height < 4 || width < 4 {
                return cfg("scm image observations need height and width >= 4".into());
            }
        }
        for (name, v) in [
            ("scm.sigma_x", self.sigma_x),
            ("scm.sigma_a", self.sigma_a),
            ("scm.transition_noise", self.transition_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return cfg(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return cfg("scm.target_rate must lie in (0, 1)".into());
        }
        for (name, r) in [
            ("s", &self.relevance.s),
            ("v", &self.relevance.v),
            ("z", &self.relevance.z),
        ] {
            if r.len() != 3 {
                return cfg(format!(
                    "scm.relevance.{name} must list 3 attribute weights"
                ));
            }
        }
        self.population.validate()
    }

    /// Draws the ground-truth parameters. Deterministic in `seed`.
    pub fn build(&self) -> Result<ScmParams> {
        self.validate()?;
        let dims = self.dims();
        let mut rng = rng_for(self.seed, &[TAG_PARAMS]);
        let relevance = [&self.relevance.s, &self.relevance.v, &self.relevance.z];
        let mut blocks = Block::ALL.iter().map(|&b| {
            let d = dims.block(b);
            let rel = relevance[b.index()];
            let weight = Dense::from_fn(d, d + dims.d_b, |i, j| {
                let e: f64 = StandardNormal.sample(&mut rng);
                if j < d {
                    if i == j {
                        self.persistence[b.index()]
                    } else {
                        self.coupling * e / (d as f64).sqrt()
                    }
                } else {
                    self.attribute_gain * rel[j - d] * e.signum()
                }
            });
            let bias = normal_vec(&mut rng, d, 0.1);
            let log_var_weight = Dense::from_fn(d, d + dims.d_b, |_, j| {
                let e: f64 = StandardNormal.sample(&mut rng);
                if j < d {
                    0.3 * e
                } else {
                    1.5 * rel[j - d] * e
                }
            });
            let log_var_bias = normal_vec(&mut rng, d, 0.2);
            BlockTransition {
                dim: d,
                weight,
                bias,
                nonlinearity: self.nonlinearity,
                log_var_weight,
                log_var_bias,
                log_var_offset: self.log_var_offset,
                log_var_scale: self.log_var_scale,
            }
        });
        let (s, v, z) = (
            blocks.next().unwrap(),
            blocks.next().unwrap(),
            blocks.next().unwrap(),
        );
        let emission_x = self.emission_x(&dims, &mut rng);
        let a_scale = 1.0 / ((2 * dims.d_v) as f64).sqrt();
        let emission_a = Emission {
            weight: Dense::from_fn(dims.d_a, 2 * dims.d_v, |_, _| {
                let e: f64 = StandardNormal.sample(&mut rng);
                a_scale * e
            }),
            bias: vec![0.0; dims.d_a],
        };
        let mut unit = |n: usize| {
            let mut w = normal_vec(&mut rng, n, 1.0);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            w.iter_mut().for_each(|x| *x /= norm);
            w
        };
        let label = LabelHead {
            w_s: unit(dims.d_s),
            w_v: unit(dims.d_v),
            bias: 0.0,
        };
        let mut params = ScmParams {
            dims,
            observation: self.observation,
            s,
            v,
            z,
            transition_noise: self.transition_noise,
            emission_x,
            emission_a,
            label,
            sigma_x: self.sigma_x,
            sigma_a: self.sigma_a,
            base_population: self.population.base(dims.required_prototypes()),
            seed: self.seed,
        };
        let sd = label_logit_sd(&params, 4000)?;
        let scale = self.label_gain / sd.max(1e-12);
        params
            .label
            .w_s
            .iter_mut()
            .chain(params.label.w_v.iter_mut())
            .for_each(|x| *x *= scale);
        params.label.bias = calibrate_label_bias(&params, self.target_rate, 4000)?;
        params.validate()?;
        Ok(params)
    }

    pub fn shifted_population(&self) -> PopulationSpec {
        self.population.shifted(self.dims().required_prototypes())
    }

    fn emission_x<R: Rng>(&self, dims: &Dims, rng: &mut R) -> Emission {
        let d_h = dims.d_h();
        let scale = 1.0 / ((2 * d_h) as f64).sqrt();
        let block_of = |col: usize| {
            let j = col % d_h;
            if j < dims.d_s {
                Block::S
            } else if j < dims.d_s + dims.d_v {
                Block::V
            } else {
                Block::Z
            }
        };
        let support = |b: Block, pixel: usize| match self.observation {
            ObservationKind::Vector { .. } => true,
            ObservationKind::Image { height, width } => image_support(b, height, width, pixel),
        };
        let weight = Dense::from_fn(dims.d_x, 2 * d_h, |i, j| {
            let e: f64 = StandardNormal.sample(rng);
            let b = block_of(j);
            if support(b, i) {
                self.emission_gain[b.index()] * scale * e
            } else {
                0.0
            }
        });
        Emission {
            weight,
            bias: vec![0.0; dims.d_x],
        }
    }
}

/// Spatial support of a block's emission on an image grid: `s` occupies the
/// upper-left interior square, `v` the lower-right one, `z` the whole image.
pub fn image_support(b: Block, height: usize, width: usize, pixel: usize) -> bool {
    let (r, c) = (pixel / width, pixel % width);
    let (h4, w4) = (height / 4, width / 4);
    match b {
        Block::S => (h4..2 * h4).contains(&r) && (w4..2 * w4).contains(&c),
        Block::V => (2 * h4..3 * h4).contains(&r) && (2 * w4..3 * w4).contains(&c),
        Block::Z => true,
    }
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            scale * e
        })
        .collect()
}

fn calibration_logits(params: &ScmParams, n: usize) -> Result<Vec<f64>> {
    let mut logits = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(params.seed, &[TAG_CALIBRATE, i as u64]);
        let path = params
            .base_population
            .sample_path(&mut rng, params.dims.steps());
        let last = super::simulate::latent_path(params, &path, &mut rng)?
            .pop()
            .expect("T >= 2");
        logits.push(params.label.logit(&last.s, &last.v) - params.label.bias);
    }
    Ok(logits)
}

/// Standard deviation of the label logit over `n` base-population
/// trajectories.
fn label_logit_sd(params: &ScmParams, n: usize) -> Result<f64> {
    let logits = calibration_logits(params, n)?;
    let mean = logits.iter().sum::<f64>() / n as f64;
    Ok((logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64).sqrt())
}

/// Bisection on the label bias so that the base population's disease rate
/// equals `target`, estimated on `n` simulated latent trajectories.
pub fn calibrate_label_bias(params: &ScmParams, target: f64, n: usize) -> Result<f64> {
    let logits = calibration_logits(params, n)?;
    let rate = |b: f64| {
        logits
            .iter()
            .map(|l| 1.0 / (1.0 + (-(l + b)).exp()))
            .sum::<f64>()
            / n as f64
    };
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
