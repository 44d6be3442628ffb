//! Two-layer tanh network applied month by month, with hand-written
//! backpropagation of the latitude-weighted MSE.
//!
//! For one month the flattened input `x` (4 forcers x cells) is z-scored per
//! forcer, mapped through `h = tanh(x W1 + b1)` and `o = h W2 + b2`, and the
//! prediction is `mean_out + std_out * o` where `mean_out` is the per-cell
//! training mean of each output variable and `std_out` its anomaly spread.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use super::schedule::Slots;
use super::EmulatorError;
use crate::dataset::{ChunkView, MONTHS_PER_YEAR, N_INPUTS, N_OUTPUTS};
use crate::grid::LatWeights;
use crate::rng::Pcg32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub n_lat: usize,
    pub n_lon: usize,
    pub input_mean: Array1<f64>,
    pub input_std: Array1<f64>,
    /// `[variable * cells + cell]`.
    pub output_mean: Array1<f64>,
    pub output_std: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradient of the loss with respect to the trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpGradient {
    pub(crate) fn into_slots(self) -> Slots {
        Slots {
            w1: self.w1,
            b1: self.b1,
            w2: self.w2,
            b2: self.b2,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Normalisation statistics gathered from training chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub input_mean: Array1<f64>,
    pub input_std: Array1<f64>,
    pub output_mean: Array1<f64>,
    pub output_std: Array1<f64>,
}

fn positive_or_one(v: f64) -> f64 {
    if v > 1e-12 && v.is_finite() {
        v
    } else {
        1.0
    }
}

pub fn norm_stats(train: &[ChunkView<'_>]) -> Result<NormStats, EmulatorError> {
    let first = train.first().ok_or(EmulatorError::EmptyTraining)?;
    let (_, _, n_lat, n_lon) = first.inputs.dim();
    let cells = n_lat * n_lon;
    let n = (train.len() * MONTHS_PER_YEAR) as f64;

    let mut in_sum = [0.0; N_INPUTS];
    let mut in_sq = [0.0; N_INPUTS];
    let mut out_sum = Array1::<f64>::zeros(N_OUTPUTS * cells);
    for chunk in train {
        for g in 0..N_INPUTS {
            let x = chunk.inputs.index_axis(Axis(1), g);
            in_sum[g] += x.sum();
            in_sq[g] += x.iter().map(|v| v * v).sum::<f64>();
        }
        let y = chunk
            .outputs
            .to_shape((MONTHS_PER_YEAR, N_OUTPUTS * cells))
            .expect("contiguous");
        out_sum += &y.sum_axis(Axis(0));
    }
    let count = n * cells as f64;
    let input_mean = Array1::from_iter(in_sum.iter().map(|s| s / count));
    let input_std = Array1::from_iter(
        in_sq
            .iter()
            .zip(&input_mean)
            .map(|(sq, m)| positive_or_one((sq / count - m * m).max(0.0).sqrt())),
    );
    let output_mean = out_sum / n;

    let mut out_sq = [0.0; N_OUTPUTS];
    for chunk in train {
        let y = chunk
            .outputs
            .to_shape((MONTHS_PER_YEAR, N_OUTPUTS * cells))
            .expect("contiguous");
        for row in y.outer_iter() {
            for (c, (v, m)) in row.iter().zip(&output_mean).enumerate() {
                out_sq[c / cells] += (v - m) * (v - m);
            }
        }
    }
    let output_std =
        Array1::from_iter(out_sq.iter().map(|sq| positive_or_one((sq / count).sqrt())));
    Ok(NormStats {
        input_mean,
        input_std,
        output_mean,
        output_std,
    })
}

impl MlpParams {
    /// Gaussian initialisation with variance `1 / fan_in`, zero biases.
    pub fn init(
        stats: NormStats,
        n_lat: usize,
        n_lon: usize,
        hidden: usize,
        rng: &mut Pcg32,
    ) -> Self {
        let n_in = N_INPUTS * n_lat * n_lon;
        let n_out = N_OUTPUTS * n_lat * n_lon;
        let s1 = (1.0 / n_in as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((n_in, hidden), || s1 * rng.next_normal());
        let w2 = Array2::from_shape_simple_fn((hidden, n_out), || s2 * rng.next_normal());
        Self {
            n_lat,
            n_lon,
            input_mean: stats.input_mean,
            input_std: stats.input_std,
            output_mean: stats.output_mean,
            output_std: stats.output_std,
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(n_out),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    /// Move the trainable tensors out, leaving empty arrays behind.
    pub(crate) fn take_slots(&mut self) -> Slots {
        Slots {
            w1: std::mem::take(&mut self.w1),
            b1: std::mem::take(&mut self.b1),
            w2: std::mem::take(&mut self.w2),
            b2: std::mem::take(&mut self.b2),
        }
    }

    pub(crate) fn set_slots(&mut self, slots: Slots) {
        self.w1 = slots.w1;
        self.b1 = slots.b1;
        self.w2 = slots.w2;
        self.b2 = slots.b2;
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }

    fn check_chunk(&self, inputs: &ArrayView4<'_, f64>) -> Result<(), EmulatorError> {
        let (_, n_in, n_lat, n_lon) = inputs.dim();
        if n_in != N_INPUTS || n_lat != self.n_lat || n_lon != self.n_lon {
            return Err(EmulatorError::Shape(format!(
                "inputs {:?} incompatible with a {}x{} network",
                inputs.shape(),
                self.n_lat,
                self.n_lon
            )));
        }
        Ok(())
    }

    /// Normalised design rows `[months, 4 * cells]` for one chunk.
    pub fn normalized_inputs(&self, inputs: ArrayView4<'_, f64>) -> Array2<f64> {
        let months = inputs.len_of(Axis(0));
        let cells = self.n_cells();
        let mut x = inputs
            .to_shape((months, N_INPUTS * cells))
            .expect("contiguous")
            .into_owned();
        for (c, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            let g = c / cells;
            let (m, sd) = (self.input_mean[g], self.input_std[g]);
            col.mapv_inplace(|v| (v - m) / sd);
        }
        x
    }

    pub fn flat_outputs(&self, outputs: ArrayView4<'_, f64>) -> Array2<f64> {
        let months = outputs.len_of(Axis(0));
        outputs
            .to_shape((months, N_OUTPUTS * self.n_cells()))
            .expect("contiguous")
            .into_owned()
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let mut h = x.dot(&self.w1);
        h += &self.b1;
        h.mapv_inplace(f64::tanh);
        let mut o = h.dot(&self.w2);
        o += &self.b2;
        let cells = self.n_cells();
        for (c, mut col) in o.axis_iter_mut(Axis(1)).enumerate() {
            let (m, sd) = (self.output_mean[c], self.output_std[c / cells]);
            col.mapv_inplace(|v| m + sd * v);
        }
        (h, o)
    }

    pub fn predict(&self, inputs: ArrayView4<'_, f64>) -> Result<Array4<f64>, EmulatorError> {
        self.check_chunk(&inputs)?;
        let months = inputs.len_of(Axis(0));
        let x = self.normalized_inputs(inputs);
        let (_, p) = self.forward(x.view());
        Ok(p.into_shape_with_order((months, N_OUTPUTS, self.n_lat, self.n_lon))
            .expect("row count matches"))
    }

    /// Loss and gradient on pre-assembled rows (`x` normalised, `y` raw),
    /// with `col_weights[c]` the latitude weight of output column `c`.
    pub(crate) fn loss_grad_rows(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        col_weights: &Array1<f64>,
    ) -> (f64, MlpGradient) {
        let (h, p) = self.forward(x);
        let n = (y.nrows() * y.ncols()) as f64;
        let cells = self.n_cells();
        let mut d = p - &y; // error, reused as dL/do below
        let mut loss = 0.0;
        for (c, mut col) in d.axis_iter_mut(Axis(1)).enumerate() {
            let w = col_weights[c];
            let scale = 2.0 * w / n * self.output_std[c / cells];
            col.mapv_inplace(|e| {
                loss += w * e * e;
                scale * e
            });
        }
        let loss = loss / n;
        let gw2 = h.t().dot(&d);
        let gb2 = d.sum_axis(Axis(0));
        let mut dh = d.dot(&self.w2.t());
        dh.zip_mut_with(&h, |g, &hv| *g *= 1.0 - hv * hv);
        let gw1 = x.t().dot(&dh);
        let gb1 = dh.sum_axis(Axis(0));
        (
            loss,
            MlpGradient {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
        )
    }

    /// Loss only, on pre-assembled rows.
    pub(crate) fn loss_rows(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        col_weights: &Array1<f64>,
    ) -> f64 {
        let (_, p) = self.forward(x);
        let n = (y.nrows() * y.ncols()) as f64;
        let mut loss = 0.0;
        for ((pc, yc), w) in p.axis_iter(Axis(1)).zip(y.axis_iter(Axis(1))).zip(col_weights) {
            let sq: f64 = pc.iter().zip(yc.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            loss += w * sq;
        }
        loss / n
    }

    pub fn column_weights(&self, weights: &LatWeights) -> Array1<f64> {
        let cells = self.n_cells();
        Array1::from_shape_fn(N_OUTPUTS * cells, |c| weights.w[(c % cells) / self.n_lon])
    }

    /// Stack a batch of chunks into `(normalised inputs, raw outputs)`.
    pub fn assemble(&self, batch: &[ChunkView<'_>]) -> Result<(Array2<f64>, Array2<f64>), EmulatorError> {
        let cells = self.n_cells();
        let rows = batch.len() * MONTHS_PER_YEAR;
        let mut x = Array2::zeros((rows, N_INPUTS * cells));
        let mut y = Array2::zeros((rows, N_OUTPUTS * cells));
        for (k, chunk) in batch.iter().enumerate() {
            self.check_chunk(&chunk.inputs)?;
            if chunk.outputs.dim() != (MONTHS_PER_YEAR, N_OUTPUTS, self.n_lat, self.n_lon)
                || chunk.inputs.len_of(Axis(0)) != MONTHS_PER_YEAR
            {
                return Err(EmulatorError::Shape(format!(
                    "chunk {k} has outputs {:?}",
                    chunk.outputs.shape()
                )));
            }
            let r = k * MONTHS_PER_YEAR..(k + 1) * MONTHS_PER_YEAR;
            x.slice_mut(s![r.clone(), ..])
                .assign(&self.normalized_inputs(chunk.inputs));
            y.slice_mut(s![r, ..]).assign(&self.flat_outputs(chunk.outputs));
        }
        Ok((x, y))
    }
}

/// Latitude-weighted MSE of the network over `batch` and its gradient.
pub fn loss_and_gradient(
    params: &MlpParams,
    batch: &[ChunkView<'_>],
    weights: &LatWeights,
) -> Result<(f64, MlpGradient), EmulatorError> {
    if batch.is_empty() {
        return Err(EmulatorError::EmptyTraining);
    }
    if weights.n_lat() != params.n_lat {
        return Err(EmulatorError::Shape(format!(
            "{} latitude weights for a {}-row network",
            weights.n_lat(),
            params.n_lat
        )));
    }
    let (x, y) = params.assemble(batch)?;
    let (loss, grad) = params.loss_grad_rows(x.view(), y.view(), &params.column_weights(weights));
    if !loss.is_finite() || !grad.max_abs().is_finite() {
        return Err(EmulatorError::Divergence { epoch: None });
    }
    Ok((loss, grad))
}
