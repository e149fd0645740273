//! Attribute populations: weighted prototype mixtures for `B`.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution over attribute paths `B_0, ..., B_{T-2}`.
///
/// A sequence draws one prototype by weight, adds per-coordinate Gaussian
/// jitter once, then moves by `drift` per step:
/// `B_t = prototype + jitter_noise + t * drift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub name: String,
    /// Attribute coordinate names, length `d_B`.
    pub attributes: Vec<String>,
    /// Coordinates taking values in `{0, 1}`; these are never jittered and are
    /// the ones compared across splits with a two-proportion test.
    pub binary: Vec<bool>,
    pub prototypes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub jitter: Vec<f64>,
    pub drift: Vec<f64>,
}

impl PopulationSpec {
    pub fn d_b(&self) -> usize {
        self.attributes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_b();
        let bad = |m: String| Err(Error::Contract(format!("population '{}': {m}", self.name)));
        if d == 0 {
            return bad("no attribute coordinates".into());
        }
        if self.binary.len() != d || self.jitter.len() != d || self.drift.len() != d {
            return bad("binary/jitter/drift lengths must equal the attribute count".into());
        }
        if self.prototypes.is_empty() || self.prototypes.len() != self.weights.len() {
            return bad("need one weight per prototype".into());
        }
        if self
            .prototypes
            .iter()
            .any(|p| p.len() != d || p.iter().any(|x| !x.is_finite()))
        {
            return bad("prototype with wrong length or non-finite entry".into());
        }
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite())
            || self.weights.iter().sum::<f64>() <= 0.0
        {
            return bad("weights must be non-negative with positive sum".into());
        }
        if self.jitter.iter().any(|&j| !(j >= 0.0)) {
            return bad("jitter must be non-negative".into());
        }
        for (k, &is_bin) in self.binary.iter().enumerate() {
            if is_bin && self.prototypes.iter().any(|p| p[k] != 0.0 && p[k] != 1.0) {
                return bad(format!(
                    "binary coordinate '{}' has a non-binary prototype value",
                    self.attributes[k]
                ));
            }
        }
        Ok(())
    }

    /// Number of pairwise distinct prototypes.
    pub fn distinct_prototypes(&self) -> usize {
        let mut seen: Vec<&Vec<f64>> = Vec::new();
        for p in &self.prototypes {
            if !seen.iter().any(|q| *q == p) {
                seen.push(p);
            }
        }
        seen.len()
    }

    /// Attribute value at step index `t` (0-based) for a given prototype,
    /// without jitter.
    pub fn noise_free(&self, prototype: usize, t: usize) -> Vec<f64> {
        self.prototypes[prototype]
            .iter()
            .zip(&self.drift)
            .map(|(p, d)| p + d * t as f64)
            .collect()
    }

    /// Draws a path of `len` attribute vectors.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Vec<Vec<f64>> {
        let idx = WeightedIndex::new(&self.weights)
            .expect("validated weights")
            .sample(rng);
        let offset: Vec<f64> = self
            .jitter
            .iter()
            .map(|&j| {
                let e: f64 = StandardNormal.sample(rng);
                j * e
            })
            .collect();
        (0..len)
            .map(|t| {
                self.noise_free(idx, t)
                    .iter()
                    .zip(&offset)
                    .map(|(b, o)| b + o)
                    .collect()
            })
            .collect()
    }

    /// Mixture weights normalised to sum one.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    /// Exact mean of the first attribute vector `B_0`.
    pub fn mean_b0(&self) -> Vec<f64> {
        let p = self.probabilities();
        (0..self.d_b())
            .map(|k| self.prototypes.iter().zip(&p).map(|(q, w)| w * q[k]).sum())
            .collect()
    }

    /// Exact covariance of `B_0` (mixture plus jitter).
    pub fn cov_b0(&self) -> Vec<Vec<f64>> {
        let p = self.probabilities();
        let m = self.mean_b0();
        let d = self.d_b();
        let mut c = vec![vec![0.0; d]; d];
        for (q, w) in self.prototypes.iter().zip(&p) {
            for i in 0..d {
                for j in 0..d {
                    c[i][j] += w * (q[i] - m[i]) * (q[j] - m[j]);
                }
            }
        }
        for (i, row) in c.iter_mut().enumerate() {
            row[i] += self.jitter[i] * self.jitter[i];
        }
        c
    }
}

/// Parameters of the built-in two-group population family.
///
/// Attributes are `[group, site, age]`: `group` and `site` are binary,
/// `age` takes evenly spaced levels in `[-1, 1]`. `site` agrees with `group`
/// with probability `concordance`, which makes it a proxy for the group in
/// one population and an anti-proxy in another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    #[serde(default = "default_base_rate")]
    pub base_group_rate: f64,
    #[serde(default = "default_shift_rate")]
    pub shifted_group_rate: f64,
    #[serde(default = "default_base_conc")]
    pub base_concordance: f64,
    #[serde(default = "default_shift_conc")]
    pub shifted_concordance: f64,
    #[serde(default = "default_age_jitter")]
    pub age_jitter: f64,
    #[serde(default)]
    pub age_drift: f64,
}

fn default_base_rate() -> f64 {
    0.4
}
fn default_shift_rate() -> f64 {
    0.75
}
fn default_base_conc() -> f64 {
    0.7
}
fn default_shift_conc() -> f64 {
    0.3
}
fn default_age_jitter() -> f64 {
    0.1
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            base_group_rate: default_base_rate(),
            shifted_group_rate: default_shift_rate(),
            base_concordance: default_base_conc(),
            shifted_concordance: default_shift_conc(),
            age_jitter: default_age_jitter(),
            age_drift: 0.0,
        }
    }
}

pub const ATTRIBUTE_NAMES: [&str; 3] = ["group", "site", "age"];

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("population.base_group_rate", self.base_group_rate),
            ("population.shifted_group_rate", self.shifted_group_rate),
            ("population.base_concordance", self.base_concordance),
            ("population.shifted_concordance", self.shifted_concordance),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.age_jitter >= 0.0) || !self.age_drift.is_finite() {
            return Err(Error::Config(
                "population.age_jitter must be >= 0 and age_drift finite".into(),
            ));
        }
        Ok(())
    }

    /// Population with at least `min_prototypes` distinct prototypes.
    pub fn build(
        &self,
        name: &str,
        group_rate: f64,
        concordance: f64,
        min_prototypes: usize,
    ) -> PopulationSpec {
        let levels = min_prototypes.div_ceil(4).max(2);
        let mut prototypes = Vec::new();
        let mut weights = Vec::new();
        for g in 0..2 {
            let pg = if g == 1 { group_rate } else { 1.0 - group_rate };
            for c in 0..2 {
                let pc = if c == g {
                    concordance
                } else {
                    1.0 - concordance
                };
                for l in 0..levels {
                    let age = -1.0 + 2.0 * l as f64 / (levels - 1) as f64;
                    prototypes.push(vec![g as f64, c as f64, age]);
                    weights.push(pg * pc / levels as f64);
                }
            }
        }
        PopulationSpec {
            name: name.to_string(),
            attributes: ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(),
            binary: vec![true, true, false],
            prototypes,
            weights,
            jitter: vec![0.0, 0.0, self.age_jitter],
            drift: vec![0.0, 0.0, self.age_drift],
        }
    }

    pub fn base(&self, min_prototypes: usize) -> PopulationSpec {
        self.build(
            "base",
            self.base_group_rate,
            self.base_concordance,
            min_prototypes,
        )
    }

    pub fn shifted(&self, min_prototypes: usize) -> PopulationSpec {
        self.build(
            "shifted",
            self.shifted_group_rate,
            self.shifted_concordance,
            min_prototypes,
        )
    }
}
