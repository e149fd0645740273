//! Tractable toy instance of the full model and its independent oracles.
#![allow(dead_code)]

use causal_hmm::model::{ModelConfig, Nonlinearity, SeqVaeNet};
use causal_hmm::types::{Label, ObservationKind, ObservationStep, SequenceSample};
use chmm_autodiff::Tape;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Probabilists' Gauss–Hermite rule: `E[f(X)], X ~ N(0, 1)` ≈ `sum w_i f(x_i)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[f(X)]` for `X ~ N(mean, var)` by Gauss–Hermite.
pub fn gaussian_expectation(mean: f64, var: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(n);
    x.iter()
        .zip(&w)
        .map(|(x, w)| w * f(mean + var.sqrt() * x))
        .sum()
}

fn log_sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        -(-a).exp().ln_1p()
    } else {
        a - a.exp().ln_1p()
    }
}

pub struct Toy {
    pub net: SeqVaeNet,
    pub seq: SequenceSample,
}

/// One-dimensional blocks, identity nonlinearity, one observed step
/// followed by the label (horizon 2).
pub fn toy(init_seed: u64) -> Toy {
    let mut cfg = ModelConfig::new(1, 1, ObservationKind::Vector { dim: 2 });
    cfg.d_s = 1;
    cfg.d_v = 1;
    cfg.d_z = 1;
    cfg.nonlinearity = Nonlinearity::Identity;
    cfg.encoder_width = 4;
    cfg.encoder_depth = 1;
    cfg.attribute_width = 2;
    cfg.posterior_hidden = 4;
    cfg.prior_hidden = 3;
    cfg.init_seed = init_seed;
    let mut net = SeqVaeNet::new(cfg).unwrap();
    let (w, _) = net.classifier_params();
    net.store_mut().get_mut(w).mapv_inplace(|v| 3.0 * v);
    let seq = SequenceSample {
        steps: vec![ObservationStep {
            x: vec![0.3, -0.5],
            a: vec![0.4],
            b_prev: vec![1.0],
        }],
        y: Label::Disease,
        truth: None,
    };
    Toy { net, seq }
}

/// Exact expectations of every objective term and the exact evidence.
#[derive(Debug, Clone)]
pub struct ToyOracle {
    pub recon_x: f64,
    pub recon_a: f64,
    pub kl: [f64; 3],
    pub kl_quadrature: [f64; 3],
    pub predictive: f64,
    pub expected_total: f64,
    /// `log p(x, A, y)`: Gaussian marginal plus 1-D quadrature of the label.
    pub exact_log_lik: f64,
    /// Same quantity by 3-D Gauss–Hermite quadrature under the prior.
    pub exact_log_lik_grid: f64,
}

pub fn oracle(toy: &Toy) -> ToyOracle {
    let net = &toy.net;
    let obs = &toy.seq.steps[0];
    let zeros = vec![vec![0.0]; 3];
    let (prior, _) = net
        .prior_step(&zeros, &obs.b_prev, &net.initial_prior_carry())
        .unwrap();
    let post = net.posterior_step(&zeros, obs).unwrap();
    let m0: Vec<f64> = prior.iter().map(|g| g.mean[0]).collect();
    let p0: Vec<f64> = prior.iter().map(|g| g.log_var[0].exp()).collect();
    let mq: Vec<f64> = post.iter().map(|g| g.mean[0]).collect();
    let qv: Vec<f64> = post.iter().map(|g| g.log_var[0].exp()).collect();

    // Affine maps recovered from the (linear) decoders and classifier.
    let unit = |j: usize| {
        (0..3)
            .map(|k| vec![if k == j { 1.0 } else { 0.0 }])
            .collect::<Vec<_>>()
    };
    let cx = net.decode_image(&zeros).unwrap().mean;
    let wx: Vec<Vec<f64>> = (0..3)
        .map(|j| {
            net.decode_image(&unit(j))
                .unwrap()
                .mean
                .iter()
                .zip(&cx)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    let ca = net.decode_clinical(&[0.0]).unwrap().mean[0];
    let wa = net.decode_clinical(&[1.0]).unwrap().mean[0] - ca;
    let logit = |h: &[f64]| {
        let tape = Tape::new();
        let vars: Vec<_> = h
            .iter()
            .map(|v| tape.constant(Array2::from_elem((1, 1), *v)))
            .collect();
        net.class_logit(&tape, &vars).item()
    };
    let c_y = logit(&[0.0, 0.0, 0.0]);
    let w_y = [logit(&[1.0, 0.0, 0.0]) - c_y, logit(&[0.0, 1.0, 0.0]) - c_y];
    let y = toy.seq.y.signed() as f64;
    let var = net.config().decoder_variance.variance();

    let recon_x = (0..2)
        .map(|i| {
            let r = obs.x[i] - cx[i] - (0..3).map(|j| wx[j][i] * mq[j]).sum::<f64>();
            let spread: f64 = (0..3).map(|j| wx[j][i].powi(2) * qv[j]).sum();
            -0.5 * (LN_2PI + var.ln()) - 0.5 * (r * r + spread) / var
        })
        .sum::<f64>();
    let r_a = obs.a[0] - ca - wa * mq[1];
    let recon_a = -0.5 * (LN_2PI + var.ln()) - 0.5 * (r_a * r_a + wa * wa * qv[1]) / var;

    let mut kl = [0.0; 3];
    let mut kl_quadrature = [0.0; 3];
    for k in 0..3 {
        kl[k] =
            0.5 * ((p0[k] / qv[k]).ln() + qv[k] / p0[k] + (mq[k] - m0[k]).powi(2) / p0[k] - 1.0);
        let lq = |h: f64| -0.5 * (LN_2PI + qv[k].ln() + (h - mq[k]).powi(2) / qv[k]);
        let lp = |h: f64| -0.5 * (LN_2PI + p0[k].ln() + (h - m0[k]).powi(2) / p0[k]);
        kl_quadrature[k] = gaussian_expectation(mq[k], qv[k], 60, |h| lq(h) - lp(h));
    }

    let mu_a = c_y + w_y[0] * mq[0] + w_y[1] * mq[1];
    let var_a = w_y[0].powi(2) * qv[0] + w_y[1].powi(2) * qv[1];
    let predictive = gaussian_expectation(mu_a, var_a, 120, |a| log_sigmoid(y * a).exp()).ln();

    let expected_total = predictive + recon_x + recon_a - kl.iter().sum::<f64>();

    // Exact Gaussian evidence of (x, A) and the posterior over h.
    let m = DMatrix::from_fn(3, 3, |r, c| {
        if r < 2 {
            wx[c][r]
        } else if c == 1 {
            wa
        } else {
            0.0
        }
    });
    let z = DVector::from_vec(vec![obs.x[0] - cx[0], obs.x[1] - cx[1], obs.a[0] - ca]);
    let p0m = DMatrix::from_diagonal(&DVector::from_vec(p0.clone()));
    let m0v = DVector::from_vec(m0.clone());
    let cov = &m * &p0m * m.transpose() + DMatrix::identity(3, 3) * var;
    let resid = &z - &m * &m0v;
    let chol = cov.clone().cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_pz = -0.5 * (3.0 * LN_2PI + logdet + resid.dot(&chol.solve(&resid)));
    let prec = p0m.clone().try_inverse().unwrap() + m.transpose() * &m / var;
    let s_post = prec.try_inverse().unwrap();
    let m_post = &s_post * (p0m.try_inverse().unwrap() * &m0v + m.transpose() * &z / var);
    let wv = DVector::from_vec(vec![w_y[0], w_y[1], 0.0]);
    let mu_y = c_y + wv.dot(&m_post);
    let var_y = (wv.transpose() * &s_post * &wv)[(0, 0)];
    let log_py = gaussian_expectation(mu_y, var_y, 120, |a| log_sigmoid(y * a).exp()).ln();
    let exact_log_lik = log_pz + log_py;

    let (gx, gw) = gauss_hermite(40);
    let mut acc = 0.0;
    for (i0, w0) in gx.iter().zip(&gw) {
        for (i1, w1) in gx.iter().zip(&gw) {
            for (i2, w2) in gx.iter().zip(&gw) {
                let h = [
                    m0[0] + p0[0].sqrt() * i0,
                    m0[1] + p0[1].sqrt() * i1,
                    m0[2] + p0[2].sqrt() * i2,
                ];
                let mut ll = 0.0;
                for i in 0..2 {
                    let mean = cx[i] + (0..3).map(|j| wx[j][i] * h[j]).sum::<f64>();
                    ll += -0.5 * (LN_2PI + var.ln() + (obs.x[i] - mean).powi(2) / var);
                }
                ll += -0.5 * (LN_2PI + var.ln() + (obs.a[0] - ca - wa * h[1]).powi(2) / var);
                ll += log_sigmoid(y * (c_y + w_y[0] * h[0] + w_y[1] * h[1]));
                acc += w0 * w1 * w2 * ll.exp();
            }
        }
    }
    ToyOracle {
        recon_x,
        recon_a,
        kl,
        kl_quadrature,
        predictive,
        expected_total,
        exact_log_lik,
        exact_log_lik_grid: acc.ln(),
    }
}
