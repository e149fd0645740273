//! Per-block saliency over the observation of one step.
//!
//! Target: `||mu_block,t||` (with a `1e-12` floor inside the root) of the
//! zero-noise posterior rollout. Images use gradient-weighted activations of
//! the last encoder convolution; vectors use input-gradient magnitudes.

use std::io::Write as _;

use chmm_autodiff::Tape;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SeqVaeNet;
use crate::types::{ObservationKind, SequenceSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Binary 8-bit PGM.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write!(out, "P5\n{} {}\n255\n", self.width, self.height).expect("write to vec");
        out.extend(
            self.values
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    fn normalized(height: usize, width: usize, mut values: Vec<f64>) -> Self {
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
        Self {
            height,
            width,
            values,
        }
    }
}

/// Saliency of latent block `block` at 1-based step `t` over `x_t`.
pub fn saliency(net: &SeqVaeNet, seq: &SequenceSample, block: &str, t: usize) -> Result<Heatmap> {
    let k = net
        .layout()
        .index_of(block)
        .ok_or_else(|| Error::Contract(format!("model has no latent block '{block}'")))?;
    if t < 1 || t > seq.len() {
        return Err(Error::Contract(format!(
            "step {t} outside 1..={}",
            seq.len()
        )));
    }
    let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape");
    let tape = Tape::new();
    let mut encoded = Vec::with_capacity(t);
    let mut x_t = None;
    for (i, st) in seq.steps[..t].iter().enumerate() {
        if st.x.len() != net.config().d_x() {
            return Err(Error::Contract(format!(
                "x has {} entries, model expects {}",
                st.x.len(),
                net.config().d_x()
            )));
        }
        let x = if i + 1 == t {
            tape.leaf(row(&st.x))
        } else {
            tape.constant(row(&st.x))
        };
        if i + 1 == t {
            x_t = Some(x);
        }
        encoded.push(net.encode_step(
            &tape,
            x,
            tape.constant(row(&st.a)),
            tape.constant(row(&st.b_prev)),
        ));
    }
    let rollout = net.posterior_rollout(&tape, &encoded, 1, &mut crate::rng::ZeroNoise);
    let mean = rollout[t - 1].posterior[k].mean;
    let target = (mean.square().sum() + 1e-12).sqrt();
    let grads = tape.backward(target);

    match net.config().observation {
        ObservationKind::Vector { dim } => {
            let g = grads.wrt(x_t.expect("step t encoded"));
            Ok(Heatmap::normalized(
                1,
                dim,
                g.iter().map(|v| v.abs()).collect(),
            ))
        }
        ObservationKind::Image { height, width } => {
            let act_var = encoded[t - 1]
                .last_conv
                .expect("image encoder has convolutions");
            let act = act_var.value();
            let g = grads.wrt(act_var);
            let channels = *net.config().conv_channels.last().expect("five channels");
            let cells = act.len() / channels;
            let (h, w) = (height / 2, width / 2);
            debug_assert_eq!(cells, h * w);
            let (act, g): (Vec<f64>, Vec<f64>) =
                (act.iter().copied().collect(), g.iter().copied().collect());
            let mut cam = vec![0.0; cells];
            for c in 0..channels {
                let alpha = g[c * cells..(c + 1) * cells].iter().sum::<f64>() / cells as f64;
                for (p, v) in cam.iter_mut().enumerate() {
                    *v += alpha * act[c * cells + p];
                }
            }
            let values = (0..height * width)
                .map(|i| {
                    let (r, col) = (i / width, i % width);
                    cam[(r * h / height) * w + col * w / width].max(0.0)
                })
                .collect();
            Ok(Heatmap::normalized(height, width, values))
        }
    }
}
