//! Per-cell linear regression on area-mean forcing and month of year.
//!
//! Design row for month `m` of a chunk:
//! `[1, gm_CO2, gm_CH4, gm_BC, gm_SO2, [m == 1], ..., [m == 11]]`
//! where `gm_*` are latitude-weighted global means. January is the dropped
//! month level. All cells share the design, so one factorisation serves
//! every output column.
//!
//! The normal equations `(X^T X + lambda I) beta = X^T y` are solved in
//! centred and scaled coordinates `beta = T gamma`, i.e.
//! `(Z^T Z + lambda T^T T) gamma = Z^T y` with `Z = X T`; the two systems
//! have the same solution but the second is far better conditioned.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use super::EmulatorError;
use crate::dataset::{ChunkView, MONTHS_PER_YEAR, N_INPUTS, N_OUTPUTS};
use crate::grid::LatWeights;

pub const N_FEATURES: usize = 1 + N_INPUTS + (MONTHS_PER_YEAR - 1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternScaling {
    /// `[variable][cell][feature]`, cells in row-major (lat, lon) order.
    pub coefficients: Array3<f64>,
    pub ridge_lambda: f64,
    pub lat_weights: LatWeights,
    pub n_lon: usize,
}

/// Design matrix rows for one chunk (12 x N_FEATURES).
pub fn design_rows(inputs: ArrayView4<'_, f64>, weights: &LatWeights) -> Array2<f64> {
    let (months, n_in, n_lat, n_lon) = inputs.dim();
    let n_cells = (n_lat * n_lon) as f64;
    let mut x = Array2::zeros((months, N_FEATURES));
    for t in 0..months {
        x[[t, 0]] = 1.0;
        for g in 0..n_in.min(N_INPUTS) {
            let field = inputs.slice(s![t, g, .., ..]);
            let total: f64 = field
                .outer_iter()
                .zip(&weights.w)
                .map(|(row, w)| w * row.sum())
                .sum();
            x[[t, 1 + g]] = total / n_cells;
        }
        let month = t % MONTHS_PER_YEAR;
        if month > 0 {
            x[[t, 1 + N_INPUTS + month - 1]] = 1.0;
        }
    }
    x
}

/// In-place Cholesky factorisation of a symmetric positive-definite matrix
/// (lower triangle). Fails with the offending column when a pivot is not
/// positive relative to the original diagonal.
fn cholesky(a: &mut Array2<f64>) -> Result<(), usize> {
    let n = a.nrows();
    let diag: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > 1e-10 * diag[j].abs().max(f64::MIN_POSITIVE)) {
            return Err(j);
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &Array2<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[[i, k]] * b[k];
        }
        b[i] = v / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[[k, i]] * b[k];
        }
        b[i] = v / l[[i, i]];
    }
}

pub fn fit_pattern_scaling(
    train: &[ChunkView<'_>],
    weights: &LatWeights,
    ridge_lambda: f64,
) -> Result<PatternScaling, EmulatorError> {
    if train.is_empty() {
        return Err(EmulatorError::EmptyTraining);
    }
    if !(ridge_lambda >= 0.0) {
        return Err(EmulatorError::Config("ridge strength must be >= 0".into()));
    }
    let (_, _, n_lat, n_lon) = train[0].outputs.dim();
    let n_cells = n_lat * n_lon;
    let rows = train.len() * MONTHS_PER_YEAR;
    if rows < N_FEATURES {
        return Err(EmulatorError::TooFewRows {
            rows,
            needed: N_FEATURES,
        });
    }

    let mut x = Array2::zeros((rows, N_FEATURES));
    let mut y = Array2::zeros((rows, N_OUTPUTS * n_cells));
    for (c, chunk) in train.iter().enumerate() {
        if chunk.outputs.dim() != (MONTHS_PER_YEAR, N_OUTPUTS, n_lat, n_lon)
            || chunk.inputs.dim() != (MONTHS_PER_YEAR, N_INPUTS, n_lat, n_lon)
        {
            return Err(EmulatorError::Shape(format!(
                "training chunk {c} has shape {:?} / {:?}",
                chunk.inputs.shape(),
                chunk.outputs.shape()
            )));
        }
        let block = c * MONTHS_PER_YEAR..(c + 1) * MONTHS_PER_YEAR;
        x.slice_mut(s![block.clone(), ..])
            .assign(&design_rows(chunk.inputs, weights));
        let flat = chunk
            .outputs
            .to_shape((MONTHS_PER_YEAR, N_OUTPUTS * n_cells))
            .expect("contiguous reshape");
        y.slice_mut(s![block, ..]).assign(&flat);
    }

    // beta = T gamma with beta_0 = gamma_0 - sum_j m_j gamma_j / s_j and
    // beta_j = gamma_j / s_j.
    let mut t = Array2::<f64>::eye(N_FEATURES);
    let mut z = x.clone();
    for j in 1..N_FEATURES {
        let col = x.column(j);
        let mean = col.mean().expect("non-empty");
        let sd = col.mapv(|v| (v - mean).powi(2)).mean().expect("non-empty").sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        z.column_mut(j).mapv_inplace(|v| (v - mean) / sd);
        t[[0, j]] = -mean / sd;
        t[[j, j]] = 1.0 / sd;
    }
    let mut a = z.t().dot(&z);
    if ridge_lambda > 0.0 {
        a.scaled_add(ridge_lambda, &t.t().dot(&t));
    }
    cholesky(&mut a).map_err(|column| EmulatorError::Singular { column })?;

    let rhs = z.t().dot(&y); // N_FEATURES x outputs
    let mut coefficients = Array3::zeros((N_OUTPUTS, n_cells, N_FEATURES));
    let mut gamma = vec![0.0; N_FEATURES];
    for col in 0..N_OUTPUTS * n_cells {
        gamma.iter_mut().zip(rhs.column(col)).for_each(|(g, r)| *g = *r);
        cholesky_solve(&a, &mut gamma);
        let beta = t.dot(&Array1::from(gamma.clone()));
        coefficients
            .slice_mut(s![col / n_cells, col % n_cells, ..])
            .assign(&beta);
    }
    Ok(PatternScaling {
        coefficients,
        ridge_lambda,
        lat_weights: weights.clone(),
        n_lon,
    })
}

impl PatternScaling {
    pub fn n_cells(&self) -> usize {
        self.coefficients.len_of(Axis(1))
    }

    pub fn predict(&self, inputs: ArrayView4<'_, f64>) -> Result<Array4<f64>, EmulatorError> {
        let (months, n_in, n_lat, n_lon) = inputs.dim();
        if n_in != N_INPUTS
            || n_lat != self.lat_weights.n_lat()
            || n_lon != self.n_lon
            || n_lat * n_lon != self.n_cells()
        {
            return Err(EmulatorError::Shape(format!(
                "inputs {:?} incompatible with a {}x{} pattern-scaling model",
                inputs.shape(),
                self.lat_weights.n_lat(),
                self.n_lon
            )));
        }
        let x = design_rows(inputs, &self.lat_weights);
        let flat = self
            .coefficients
            .to_shape((N_OUTPUTS * self.n_cells(), N_FEATURES))
            .expect("contiguous");
        let pred = x.dot(&flat.t());
        Ok(pred
            .into_shape_with_order((months, N_OUTPUTS, n_lat, n_lon))
            .expect("row count matches"))
    }
}
