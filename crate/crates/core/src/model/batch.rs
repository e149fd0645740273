use chmm_autodiff::Matrix;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{Label, SequenceSample};

/// One time step across a batch: rows are sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub x: Matrix,
    pub a: Matrix,
    pub b: Matrix,
}

/// Sequences of equal length stacked row-wise per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub steps: Vec<StepBatch>,
    pub labels: Vec<Label>,
}

impl SeqBatch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a SequenceSample>) -> Result<Self> {
        let samples: Vec<&SequenceSample> = samples.into_iter().collect();
        let first = samples
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let n_steps = first.len();
        if n_steps == 0 {
            return Err(Error::Contract("sequence length must be >= 1".into()));
        }
        if samples.iter().any(|s| s.len() != n_steps) {
            return Err(Error::Contract(
                "sequences in a batch must share one length".into(),
            ));
        }
        let n = samples.len();
        let mut steps = Vec::with_capacity(n_steps);
        for t in 0..n_steps {
            let s0 = &first.steps[t];
            let (dx, da, db) = (s0.x.len(), s0.a.len(), s0.b_prev.len());
            let mut x = Array2::zeros((n, dx));
            let mut a = Array2::zeros((n, da));
            let mut b = Array2::zeros((n, db));
            for (i, s) in samples.iter().enumerate() {
                let st = &s.steps[t];
                if st.x.len() != dx || st.a.len() != da || st.b_prev.len() != db {
                    return Err(Error::Contract(format!(
                        "sequence {i} step {} has mismatched dims",
                        t + 1
                    )));
                }
                x.row_mut(i).assign(&ndarray::ArrayView1::from(&st.x));
                a.row_mut(i).assign(&ndarray::ArrayView1::from(&st.a));
                b.row_mut(i).assign(&ndarray::ArrayView1::from(&st.b_prev));
            }
            steps.push(StepBatch { x, a, b });
        }
        Ok(Self {
            steps,
            labels: samples.iter().map(|s| s.y).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Steps `t1..=t2` (1-based). Nothing outside the window is copied.
    pub fn window(&self, t1: usize, t2: usize) -> Result<SeqBatch> {
        if t1 < 1 || t1 > t2 || t2 > self.num_steps() {
            return Err(Error::Contract(format!(
                "window [{t1}, {t2}] outside 1..={}",
                self.num_steps()
            )));
        }
        Ok(SeqBatch {
            steps: self.steps[t1 - 1..t2].to_vec(),
            labels: self.labels.clone(),
        })
    }

    /// Labels as a `(n, 1)` matrix of 0/1.
    pub fn label_matrix(&self) -> Matrix {
        Array2::from_shape_fn((self.len(), 1), |(i, _)| self.labels[i].index() as f64)
    }

    /// Labels as a `(n, 1)` matrix of -1/+1.
    pub fn signed_labels(&self) -> Matrix {
        Array2::from_shape_fn((self.len(), 1), |(i, _)| self.labels[i].signed() as f64)
    }
}
