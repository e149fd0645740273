//! Small dense helpers on top of `nalgebra`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix with a stable JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks(self.cols.max(1))
            .take(self.rows)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn check_shape(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.rows != rows || self.cols != cols || self.data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{what}: shape {}x{} ({} entries), expected {rows}x{cols}",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract(format!("{what}: non-finite entries")));
        }
        Ok(())
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Ridge regression with an unpenalised intercept.
///
/// Returns `(coef, intercept)` minimising
/// `|Y - X coef - 1 intercept|^2 + lambda |coef|^2`.
pub fn ridge_fit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(Error::Precondition(format!(
            "ridge fit needs matching non-empty rows ({n} vs {})",
            y.nrows()
        )));
    }
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let mut gram = xc.transpose() * &xc;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = xc.transpose() * &yc;
    let coef = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Precondition("ridge system is singular".into()))?,
    };
    let intercept = DMatrix::from_row_slice(1, y.ncols(), (y_mean - x_mean * &coef).as_slice());
    Ok((coef, intercept))
}
