//! Whole-experiment configuration: one TOML file plus dotted `key=value`
//! overrides.
//!
//! ```toml
//! seeds = [0, 1, 2, 3, 4]
//! [paths]    # output root and dataset directory
//! [scm]      # simulator knobs
//! [counts]   # split sizes
//! [model]    # architecture; data shapes come from [scm]
//! [train]    # optimisation; the seed comes from `seeds`
//! [eval]     # window grid, probe and saliency settings
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{window_grid, ProbeConfig};
use crate::model::{DecoderVariance, InitialState, ModelConfig, ModelKind, Nonlinearity};
use crate::scm::{ScmConfig, Split, SplitCounts};
use crate::trainer::TrainConfig;

/// Environment variable that replaces `paths.output`.
pub const OUTPUT_ENV: &str = "CAUSAL_HMM_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One training run per seed; each seeds both initialisation and training noise.
    pub seeds: Vec<u64>,
    pub paths: Paths,
    pub scm: ScmConfig,
    pub counts: SplitCounts,
    pub model: ModelSection,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Output root, relative to the working directory.
    pub output: PathBuf,
    /// Dataset directory, relative to the output root.
    pub dataset: PathBuf,
}

/// Architecture knobs of [`ModelConfig`]; shapes and the seed are filled in
/// from the rest of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub d_s: usize,
    pub d_v: usize,
    pub d_z: usize,
    pub prior_hidden: usize,
    pub encoder_width: usize,
    pub encoder_depth: usize,
    pub attribute_width: usize,
    pub posterior_hidden: usize,
    pub conv_channels: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    pub decoder_variance: DecoderVariance,
    pub log_var_clamp: f64,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// `(t1, t2)` pairs, 1-based and inclusive; every pair when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<[usize; 2]>>,
    /// Split whose posterior means are aligned with the true latents.
    #[serde(default = "default_align_split")]
    pub align_split: Split,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub saliency: SaliencyConfig,
}

fn default_align_split() -> Split {
    Split::Val
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            windows: None,
            align_split: default_align_split(),
            probe: ProbeConfig::default(),
            saliency: SaliencyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencyConfig {
    pub split: Split,
    /// Indices into the split.
    pub sequences: Vec<usize>,
    /// 1-based steps; every step when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<usize>>,
    pub blocks: Vec<String>,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            sequences: vec![0],
            steps: None,
            blocks: ["s", "v", "z"].map(String::from).to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// The synthetic benchmark shipped as `configs/benchmark.toml`.
    pub fn benchmark() -> Self {
        let mut train = TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 3e-3,
            n_mc_train: 4,
            n_mc_eval: 32,
            classification_weight: 30.0,
            selection_warmup: 150,
            ..TrainConfig::default()
        };
        train.seed = 0;
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            paths: Paths {
                output: "out".into(),
                dataset: "dataset".into(),
            },
            scm: ScmConfig::benchmark(0),
            counts: SplitCounts {
                train: 300,
                val: 100,
                test: 107,
            },
            model: ModelSection {
                kind: ModelKind::CausalHmm,
                d_s: 1,
                d_v: 1,
                d_z: 1,
                prior_hidden: 16,
                encoder_width: 64,
                encoder_depth: 2,
                attribute_width: 8,
                posterior_hidden: 32,
                conv_channels: vec![8, 8, 16, 16, 16],
                nonlinearity: Nonlinearity::Tanh,
                decoder_variance: DecoderVariance::Fixed { variance: 0.25 },
                log_var_clamp: 10.0,
                initial_state: InitialState::ZeroLatentLearnedCarry,
                baseline_width: None,
            },
            train,
            eval: EvalConfig::default(),
        }
    }

    /// Parses TOML text, applies `key=value` overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.counts.train == 0 || self.counts.val == 0 {
            return Err(Error::Config(
                "counts.train and counts.val must be positive".into(),
            ));
        }
        if self.train.seed != 0 {
            return Err(Error::Config(
                "train.seed is taken from `seeds`; leave it unset".into(),
            ));
        }
        self.scm.validate()?;
        self.model_config(self.seeds[0]).validate()?;
        self.train.validate()?;
        let steps = self.steps();
        for &[a, b] in self.eval.windows.iter().flatten() {
            if a < 1 || a > b || b > steps {
                return Err(Error::Config(format!(
                    "eval.windows entry [{a}, {b}] outside 1 <= t1 <= t2 <= {steps}"
                )));
            }
        }
        let sal = &self.eval.saliency;
        if let Some(bad) = sal.steps.iter().flatten().find(|&&t| t < 1 || t > steps) {
            return Err(Error::Config(format!(
                "eval.saliency.steps entry {bad} outside 1..={steps}"
            )));
        }
        if let Some(bad) = sal
            .blocks
            .iter()
            .find(|b| !["s", "v", "z", "h"].contains(&b.as_str()))
        {
            return Err(Error::Config(format!(
                "eval.saliency.blocks entry '{bad}' is not a latent block"
            )));
        }
        Ok(())
    }

    /// Number of observed steps per sequence (`horizon - 1`).
    pub fn steps(&self) -> usize {
        self.scm.horizon - 1
    }

    pub fn windows(&self) -> Vec<(usize, usize)> {
        match &self.eval.windows {
            Some(w) => w.iter().map(|&[a, b]| (a, b)).collect(),
            None => window_grid(self.steps()),
        }
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            kind: m.kind,
            d_s: m.d_s,
            d_v: m.d_v,
            d_z: m.d_z,
            prior_hidden: m.prior_hidden,
            encoder_width: m.encoder_width,
            encoder_depth: m.encoder_depth,
            attribute_width: m.attribute_width,
            posterior_hidden: m.posterior_hidden,
            conv_channels: m.conv_channels.clone(),
            nonlinearity: m.nonlinearity,
            decoder_variance: m.decoder_variance,
            log_var_clamp: m.log_var_clamp,
            initial_state: m.initial_state,
            baseline_width: m.baseline_width,
            init_seed: seed,
            ..ModelConfig::new(
                self.scm.d_a,
                crate::scm::ATTRIBUTE_NAMES.len(),
                self.scm.observation,
            )
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// SHA-256 of everything except `paths`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("configuration serialises");
        value.as_object_mut().expect("object").remove("paths");
        hex::encode(Sha256::digest(
            serde_json::to_vec(&value).expect("value serialises"),
        ))
    }

    /// `CAUSAL_HMM_OUT` if set, else `paths.output`.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.paths.output.clone(),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_root().join(&self.paths.dataset)
    }

    /// Directory of the configured model kind's runs.
    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join("runs").join(self.model.kind.name())
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.run_dir().join(format!("seed-{seed}"))
    }
}

/// Sets `a.b.c=value` in `table`. The value is read as a TOML value and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{assignment}'")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("--set key '{key}' is malformed")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("--set key '{key}': '{part}' is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_round_trips_through_toml() {
        let cfg = ExperimentConfig::benchmark();
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_parse_values_and_create_tables() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "train.epochs=7").unwrap();
        apply_override(&mut t, "model.kind = seq_vae").unwrap();
        apply_override(&mut t, "eval.windows=[[1, 2]]").unwrap();
        assert_eq!(t["train"]["epochs"].as_integer(), Some(7));
        assert_eq!(t["model"]["kind"].as_str(), Some("seq_vae"));
        assert!(t["eval"]["windows"].is_array());
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "train.epochs.x=1").is_err());
    }

    #[test]
    fn hash_ignores_paths() {
        let a = ExperimentConfig::benchmark();
        let mut b = a.clone();
        b.paths.output = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.train.epochs += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
