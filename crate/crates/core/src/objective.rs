//! Training objective: per-step reconstruction and KL terms plus the
//! Monte-Carlo predictive term `log q(y_T | u_<T)`.
//!
//! For a sequence with observed steps `1..T-1`
//!
//! ```text
//! total = log q(y_T | u_<T) + sum_t [ log p(x_t | h_t) + log p(A_t | v_t)
//!                                     - KL_s,t - KL_v,t - KL_z,t ]
//! ```
//!
//! The reconstruction terms use one pathwise posterior sample per step; KLs
//! are closed-form between the posterior and the prior evaluated at the
//! sampled previous state. The predictive term is `log` of the mean
//! classifier probability of the observed label over `n_mc` independent
//! posterior rollouts.

use std::collections::BTreeMap;

use chmm_autodiff::{Tape, Var};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiagGaussian, EncodedStep, GaussianVar, SeqBatch, SeqVaeNet};
use crate::rng::NoiseSource;
use crate::types::SequenceSample;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the final step's prior/posterior term is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// Closed-form KL at every step.
    #[default]
    ClosedForm,
    /// Single-sample `log q - log p` at the final step.
    SampledFinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveOptions {
    pub n_mc: usize,
    pub kl_mode: KlMode,
    /// Multiplies the predictive term in the loss (not in `total`).
    pub classification_weight: f64,
}

impl ObjectiveOptions {
    pub fn new(n_mc: usize) -> Self {
        Self {
            n_mc,
            kl_mode: KlMode::ClosedForm,
            classification_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTerms {
    pub recon_x: f64,
    pub recon_a: f64,
    /// One KL per latent block, in layout order.
    pub kl: Vec<f64>,
}

/// Itemised objective of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub blocks: Vec<String>,
    pub steps: Vec<StepTerms>,
    pub predictive_logprob: f64,
    pub total: f64,
}

impl ElboBreakdown {
    /// `predictive + sum_t (recon_x + recon_a - sum kl)`.
    pub fn sum_of_terms(&self) -> f64 {
        self.predictive_logprob
            + self
                .steps
                .iter()
                .map(|s| s.recon_x + s.recon_a - s.kl.iter().sum::<f64>())
                .sum::<f64>()
    }

    /// Flat `term -> value` map with per-step keys (`recon_x_1`, `kl_s_2`, ...)
    /// and step sums (`recon_x`, `kl_s`, ...).
    pub fn to_metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (t, st) in self.steps.iter().enumerate() {
            let t = t + 1;
            m.insert(format!("recon_x_{t}"), st.recon_x);
            m.insert(format!("recon_a_{t}"), st.recon_a);
            *m.entry("recon_x".into()).or_insert(0.0) += st.recon_x;
            *m.entry("recon_a".into()).or_insert(0.0) += st.recon_a;
            for (name, kl) in self.blocks.iter().zip(&st.kl) {
                m.insert(format!("kl_{name}_{t}"), *kl);
                *m.entry(format!("kl_{name}")).or_insert(0.0) += kl;
            }
        }
        m.insert("predictive_logprob".into(), self.predictive_logprob);
        m.insert("total".into(), self.total);
        m
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.to_metrics()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(k, _)| k)
    }
}

/// Closed-form `KL(q || p)` between factorised Gaussians.
pub fn kl_diag_gaussian(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::Contract(format!(
            "KL between dims {} and {}",
            q.dim(),
            p.dim()
        )));
    }
    Ok((0..q.dim())
        .map(|i| {
            let (mq, lq, mp, lp) = (q.mean[i], q.log_var[i], p.mean[i], p.log_var[i]);
            0.5 * (lp - lq + (lq - lp).exp() + (mq - mp).powi(2) / lp.exp() - 1.0)
        })
        .sum())
}

/// Row-wise closed-form KL, `(n, 1)`.
pub fn kl_graph<'t>(q: &GaussianVar<'t>, p: &GaussianVar<'t>) -> Var<'t> {
    let diff = q.mean - p.mean;
    let inv_p = (-p.log_var).exp();
    ((p.log_var - q.log_var) + (q.log_var - p.log_var).exp() + diff.square() * inv_p - 1.0)
        .sum_cols()
        * 0.5
}

/// Row-wise Gaussian log density of `x`, `(n, 1)`.
pub fn log_density_graph<'t>(x: Var<'t>, g: &GaussianVar<'t>) -> Var<'t> {
    let d = x.cols() as f64;
    let quad = (x - g.mean).square() * (-g.log_var).exp();
    ((quad + g.log_var).sum_cols() * -0.5) - 0.5 * d * LN_2PI
}

/// Row-wise log density under `N(mean, variance I)`, `(n, 1)`.
pub fn fixed_variance_log_lik<'t>(x: Var<'t>, mean: Var<'t>, variance: f64) -> Var<'t> {
    let d = x.cols() as f64;
    (x - mean).square().sum_cols() * (-0.5 / variance) - 0.5 * d * (LN_2PI + variance.ln())
}

/// Graph-level terms of one step, each `(n, 1)`.
#[derive(Debug, Clone)]
pub struct StepVars<'t> {
    pub recon_x: Var<'t>,
    pub recon_a: Option<Var<'t>>,
    pub kl: Vec<Var<'t>>,
}

impl<'t> StepVars<'t> {
    /// `recon_x + recon_a - sum kl`.
    pub fn value(&self) -> Var<'t> {
        let mut v = self.recon_x;
        if let Some(a) = self.recon_a {
            v = v + a;
        }
        for k in &self.kl {
            v = v - *k;
        }
        v
    }
}

/// Reconstructions at the sampled state and closed-form block KLs.
pub fn step_loss<'t>(
    net: &SeqVaeNet,
    tape: &'t Tape,
    x: Var<'t>,
    a: Var<'t>,
    sample: &[Var<'t>],
    posterior: &[GaussianVar<'t>],
    prior: &[GaussianVar<'t>],
) -> StepVars<'t> {
    let var = net.config().decoder_variance.variance();
    let recon_x = fixed_variance_log_lik(x, net.decode_x(tape, sample), var);
    let recon_a = net
        .decode_a(tape, sample)
        .map(|m| fixed_variance_log_lik(a, m, var));
    let kl = posterior
        .iter()
        .zip(prior)
        .map(|(q, p)| kl_graph(q, p))
        .collect();
    StepVars {
        recon_x,
        recon_a,
        kl,
    }
}

/// Final-step terms. In closed-form mode identical to [`step_loss`]; in
/// sampled mode each block's KL is replaced by `log q(o) - log p(o)` at the
/// drawn sample, whose expectation is the KL.
#[allow(clippy::too_many_arguments)]
pub fn final_step_loss<'t>(
    net: &SeqVaeNet,
    tape: &'t Tape,
    x: Var<'t>,
    a: Var<'t>,
    sample: &[Var<'t>],
    posterior: &[GaussianVar<'t>],
    prior: &[GaussianVar<'t>],
    mode: KlMode,
) -> StepVars<'t> {
    let mut terms = step_loss(net, tape, x, a, sample, posterior, prior);
    if mode == KlMode::SampledFinal {
        terms.kl = sample
            .iter()
            .zip(posterior.iter().zip(prior))
            .map(|(o, (q, p))| log_density_graph(*o, q) - log_density_graph(*o, p))
            .collect();
    }
    terms
}

/// Diagnostic classifier log-ratio `log p(y | s, v) - log q(y | s, v)` at
/// the given blocks. Both label models are the same layer, so this is
/// exactly zero.
pub fn l2_diagnostic(net: &SeqVaeNet, blocks: &[Vec<f64>], y_positive: bool) -> Result<f64> {
    let (p_w, p_b) = net.classifier_params();
    let (q_w, q_b) = net.classifier_params();
    debug_assert!(p_w == q_w && p_b == q_b);
    let p = net.classify_blocks(blocks)?;
    let q = net.classify_blocks(blocks)?;
    let lp = if y_positive { p.ln() } else { (1.0 - p).ln() };
    let lq = if y_positive { q.ln() } else { (1.0 - q).ln() };
    let l2 = lp - lq;
    assert!(
        l2 == 0.0,
        "tied classifier must give an exactly zero log-ratio"
    );
    Ok(l2)
}

/// `log mean_k P(y_obs | s^k_{T-1}, v^k_{T-1})` per sequence, `(n, 1)`.
pub fn predictive_log_prob_graph<'t>(
    net: &SeqVaeNet,
    tape: &'t Tape,
    encoded: &[EncodedStep<'t>],
    signed_labels: &chmm_autodiff::Matrix,
    n_mc: usize,
    noise: &mut dyn NoiseSource,
) -> Var<'t> {
    let steps = net.posterior_rollout(tape, encoded, n_mc, noise);
    let last = steps.last().expect("at least one step");
    let logit = net.class_logit(tape, &last.sample);
    let y = tape.constant(tile_rows(signed_labels, n_mc));
    (logit * y).log_sigmoid().group_log_mean_exp(n_mc)
}

fn tile_rows(m: &chmm_autodiff::Matrix, k: usize) -> chmm_autodiff::Matrix {
    let n = m.nrows();
    Array2::from_shape_fn((n * k, m.ncols()), |(r, c)| m[[r % n, c]])
}

/// Batch objective on a tape: the loss to minimise and per-sequence
/// breakdowns.
#[derive(Debug)]
pub struct GraphObjective<'t> {
    pub loss: Var<'t>,
    pub breakdowns: Vec<ElboBreakdown>,
}

/// Builds the batch objective. Noise is consumed first by the single-sample
/// rollout (step by step, block by block), then by the `n_mc` rollouts of
/// the predictive term.
pub fn objective_graph<'t>(
    net: &SeqVaeNet,
    tape: &'t Tape,
    batch: &SeqBatch,
    opts: &ObjectiveOptions,
    noise: &mut dyn NoiseSource,
) -> Result<GraphObjective<'t>> {
    if opts.n_mc < 1 {
        return Err(Error::Contract("n_mc must be >= 1".into()));
    }
    if batch.is_empty() || batch.num_steps() == 0 {
        return Err(Error::Contract(
            "objective needs at least one sequence with one step".into(),
        ));
    }
    let n = batch.len();
    let encoded = net.encode_batch(tape, batch);
    let rollout = net.posterior_rollout(tape, &encoded, 1, noise);
    let mut prev = net.zero_latent(tape, n);
    let mut carry = net.initial_carry(tape, n);
    let mut step_vars = Vec::with_capacity(rollout.len());
    let last = rollout.len() - 1;
    for (t, (st, data)) in rollout.iter().zip(&batch.steps).enumerate() {
        let (prior, next_carry) = net.prior(tape, &prev, tape.constant(data.b.clone()), &carry);
        let x = tape.constant(data.x.clone());
        let a = tape.constant(data.a.clone());
        let mode = if t == last {
            opts.kl_mode
        } else {
            KlMode::ClosedForm
        };
        step_vars.push(final_step_loss(
            net,
            tape,
            x,
            a,
            &st.sample,
            &st.posterior,
            &prior,
            mode,
        ));
        prev = st.sample.clone();
        carry = next_carry;
    }
    let pred = predictive_log_prob_graph(
        net,
        tape,
        &encoded,
        &batch.signed_labels(),
        opts.n_mc,
        noise,
    );

    let mut per_seq = pred * opts.classification_weight;
    for sv in &step_vars {
        per_seq = per_seq + sv.value();
    }
    let loss = -per_seq.mean();

    let blocks: Vec<String> = net.layout().names.iter().map(|s| s.to_string()).collect();
    let pred_v = pred.value();
    let vals: Vec<(
        chmm_autodiff::Matrix,
        Option<chmm_autodiff::Matrix>,
        Vec<chmm_autodiff::Matrix>,
    )> = step_vars
        .iter()
        .map(|sv| {
            (
                sv.recon_x.value(),
                sv.recon_a.map(|a| a.value()),
                sv.kl.iter().map(|k| k.value()).collect(),
            )
        })
        .collect();
    let breakdowns = (0..n)
        .map(|i| {
            let steps: Vec<StepTerms> = vals
                .iter()
                .map(|(rx, ra, kl)| StepTerms {
                    recon_x: rx[[i, 0]],
                    recon_a: ra.as_ref().map_or(0.0, |m| m[[i, 0]]),
                    kl: kl.iter().map(|m| m[[i, 0]]).collect(),
                })
                .collect();
            let mut b = ElboBreakdown {
                blocks: blocks.clone(),
                steps,
                predictive_logprob: pred_v[[i, 0]],
                total: 0.0,
            };
            b.total = b.sum_of_terms();
            b
        })
        .collect();
    Ok(GraphObjective { loss, breakdowns })
}

/// Objective breakdown of one sequence.
pub fn total_objective(
    net: &SeqVaeNet,
    seq: &SequenceSample,
    opts: &ObjectiveOptions,
    noise: &mut dyn NoiseSource,
) -> Result<ElboBreakdown> {
    let batch = SeqBatch::from_samples([seq])?;
    let tape = Tape::new();
    let g = objective_graph(net, &tape, &batch, opts, noise)?;
    Ok(g.breakdowns.into_iter().next().expect("one sequence"))
}

/// Monte-Carlo estimate of `log q(y_T | u_<T)` for one sequence.
pub fn predictive_log_prob(
    net: &SeqVaeNet,
    seq: &SequenceSample,
    n_mc: usize,
    noise: &mut dyn NoiseSource,
) -> Result<f64> {
    if n_mc < 1 {
        return Err(Error::Contract("n_mc must be >= 1".into()));
    }
    let batch = SeqBatch::from_samples([seq])?;
    let tape = Tape::new();
    let enc = net.encode_batch(&tape, &batch);
    Ok(predictive_log_prob_graph(net, &tape, &enc, &batch.signed_labels(), n_mc, noise).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_trivial_values() {
        let std = DiagGaussian::standard(2);
        assert_eq!(kl_diag_gaussian(&std, &std).unwrap(), 0.0);
        let q = DiagGaussian {
            mean: vec![1.0, 0.0],
            log_var: vec![0.0, 0.0],
        };
        assert!((kl_diag_gaussian(&q, &std).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_diag_gaussian(&q, &DiagGaussian::standard(3)).is_err());
    }

    #[test]
    fn graph_kl_matches_value_kl() {
        let tape = Tape::new();
        let q = DiagGaussian {
            mean: vec![0.3, -1.2, 2.0],
            log_var: vec![0.5, -0.7, 1.1],
        };
        let p = DiagGaussian {
            mean: vec![-0.1, 0.4, 1.0],
            log_var: vec![-0.2, 0.3, 0.0],
        };
        let row =
            |v: &Vec<f64>| tape.constant(Array2::from_shape_vec((1, v.len()), v.clone()).unwrap());
        let gq = GaussianVar {
            mean: row(&q.mean),
            log_var: row(&q.log_var),
        };
        let gp = GaussianVar {
            mean: row(&p.mean),
            log_var: row(&p.log_var),
        };
        let a = kl_graph(&gq, &gp).item();
        let b = kl_diag_gaussian(&q, &p).unwrap();
        assert!((a - b).abs() < 1e-14);
        let x = row(&vec![0.1, 0.2, 0.3]);
        let ld = log_density_graph(x, &gq).item();
        assert!((ld - q.log_density(&[0.1, 0.2, 0.3]).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn fixed_variance_log_lik_at_mean() {
        let tape = Tape::new();
        let x = tape.constant(Array2::from_elem((1, 5), 0.7));
        let v = fixed_variance_log_lik(x, x, 1.0).item();
        assert!((v + 2.5 * LN_2PI).abs() < 1e-14);
    }
}
