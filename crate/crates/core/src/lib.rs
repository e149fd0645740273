//! Causal hidden Markov model toolkit.
//!
//! * [`scm`]: ground-truth simulator with three latent blocks `s`, `v`, `z`.
//! * [`model`]: the sequential variational model and its networks.
//! * [`objective`]: the per-sequence training objective.
//! * [`trainer`]: optimisation, model selection and checkpoints.
//! * [`evaluation`]: prediction, metrics, alignment, probes and saliency.
//! * [`baselines`]: comparison models sharing the training interface.
//! * [`experiment`]: whole-experiment configuration files.
//! * [`cli`]: the commands of the `causal-hmm` binary.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod rng;
pub mod scm;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
