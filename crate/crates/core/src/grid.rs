//! Regular lat-lon raster, cosine-latitude weights, and weighted error kernels.
//!
//! The same kernels serve as training loss and evaluation metric. All
//! arithmetic is `f64`. Arrays passed to the kernels may have any number of
//! leading axes; the last two are always `(lat, lon)`.

use ndarray::{ArrayBase, Axis, Data, Dimension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid grid size {n_lat}x{n_lon}: both counts must be at least 1")]
    InvalidSize { n_lat: i64, n_lon: i64 },
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forecast set is empty")]
    EmptyForecastSet,
    #[error("field for {variable} is invalid: {reason}")]
    InvalidField { variable: Variable, reason: String },
}

/// Uniform cell-centred latitude/longitude grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_deg: Vec<f64>,
    pub lon_deg: Vec<f64>,
}

/// Build a cell-centred grid: `lat_i = -90 + (i + 0.5) * 180 / n_lat`,
/// `lon_j = (j + 0.5) * 360 / n_lon`.
pub fn build_grid(n_lat: i64, n_lon: i64) -> Result<GridSpec, GridError> {
    if n_lat < 1 || n_lon < 1 {
        return Err(GridError::InvalidSize { n_lat, n_lon });
    }
    let (nl, nn) = (n_lat as usize, n_lon as usize);
    let lat_deg = (0..nl)
        .map(|i| -90.0 + (i as f64 + 0.5) * 180.0 / nl as f64)
        .collect();
    let lon_deg = (0..nn)
        .map(|j| (j as f64 + 0.5) * 360.0 / nn as f64)
        .collect();
    Ok(GridSpec {
        n_lat: nl,
        n_lon: nn,
        lat_deg,
        lon_deg,
    })
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    /// Check the structural invariants. Grids read from disk go through this.
    pub fn validate(&self) -> Result<(), GridError> {
        if self.n_lat == 0 || self.n_lon == 0 {
            return Err(GridError::InvalidSize {
                n_lat: self.n_lat as i64,
                n_lon: self.n_lon as i64,
            });
        }
        if self.lat_deg.len() != self.n_lat || self.lon_deg.len() != self.n_lon {
            return Err(GridError::Invalid(format!(
                "coordinate lengths {}x{} do not match counts {}x{}",
                self.lat_deg.len(),
                self.lon_deg.len(),
                self.n_lat,
                self.n_lon
            )));
        }
        if self.lat_deg.iter().any(|&l| !(l > -90.0 && l < 90.0)) {
            return Err(GridError::Invalid("latitude outside (-90, 90)".into()));
        }
        if self.lat_deg.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::Invalid(
                "latitudes not strictly increasing".into(),
            ));
        }
        let canonical = build_grid(self.n_lat as i64, self.n_lon as i64)?;
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9);
        if !close(&self.lat_deg, &canonical.lat_deg) || !close(&self.lon_deg, &canonical.lon_deg) {
            return Err(GridError::Invalid(
                "coordinates are not uniform cell centres".into(),
            ));
        }
        Ok(())
    }
}

/// Per-row area weights, normalised to mean 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatWeights {
    pub w: Vec<f64>,
}

impl LatWeights {
    pub fn n_lat(&self) -> usize {
        self.w.len()
    }
}

pub fn lat_weights(grid: &GridSpec) -> LatWeights {
    let cosines: Vec<f64> = grid
        .lat_deg
        .iter()
        .map(|lat| (lat * std::f64::consts::PI / 180.0).cos())
        .collect();
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    LatWeights {
        w: cosines.into_iter().map(|c| c / mean).collect(),
    }
}

/// Output and forcing variable identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variable {
    Co2,
    Ch4,
    Bc,
    So2,
    Tas,
    Pr,
}

impl Variable {
    pub const INPUTS: [Variable; 4] = [Variable::Co2, Variable::Ch4, Variable::Bc, Variable::So2];
    pub const OUTPUTS: [Variable; 2] = [Variable::Tas, Variable::Pr];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Co2 => "CO2",
            Variable::Ch4 => "CH4",
            Variable::Bc => "BC",
            Variable::So2 => "SO2",
            Variable::Tas => "TAS",
            Variable::Pr => "PR",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            Variable::Tas => "K",
            Variable::Pr => "mm/day",
            _ => "normalized",
        }
    }

    pub fn parse(s: &str) -> Option<Variable> {
        [
            Variable::Co2,
            Variable::Ch4,
            Variable::Bc,
            Variable::So2,
            Variable::Tas,
            Variable::Pr,
        ]
        .into_iter()
        .find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A single spatial field of a named variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub variable: Variable,
    pub values: ndarray::Array2<f64>,
}

impl Field {
    pub fn new(
        grid: &GridSpec,
        variable: Variable,
        values: ndarray::Array2<f64>,
    ) -> Result<Self, GridError> {
        if values.dim() != (grid.n_lat, grid.n_lon) {
            return Err(GridError::ShapeMismatch(format!(
                "field {:?} on grid {}x{}",
                values.dim(),
                grid.n_lat,
                grid.n_lon
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::InvalidField {
                variable,
                reason: "non-finite value".into(),
            });
        }
        if variable == Variable::Pr && values.iter().any(|&v| v < 0.0) {
            return Err(GridError::InvalidField {
                variable,
                reason: "negative precipitation".into(),
            });
        }
        Ok(Self { variable, values })
    }

    pub fn units(&self) -> &'static str {
        self.variable.units()
    }
}

fn check_pair<S1, S2, D>(
    pred: &ArrayBase<S1, D>,
    truth: &ArrayBase<S2, D>,
    weights: &LatWeights,
) -> Result<(), GridError>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if pred.shape() != truth.shape() {
        return Err(GridError::ShapeMismatch(format!(
            "pred {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let nd = pred.ndim();
    if nd < 2 {
        return Err(GridError::ShapeMismatch(
            "arrays need at least (lat, lon) axes".into(),
        ));
    }
    if pred.shape()[nd - 2] != weights.n_lat() {
        return Err(GridError::ShapeMismatch(format!(
            "{} latitude rows but {} weights",
            pred.shape()[nd - 2],
            weights.n_lat()
        )));
    }
    Ok(())
}

/// Per-forecast weighted spatial MSE, in logical (row-major) forecast order.
fn per_forecast_mse<S1, S2, D>(
    pred: &ArrayBase<S1, D>,
    truth: &ArrayBase<S2, D>,
    weights: &LatWeights,
) -> Vec<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    let nd = pred.ndim();
    let n_lat = weights.n_lat();
    let n_lon = pred.shape()[nd - 1];
    let n_cells = (n_lat * n_lon) as f64;
    let lon_axis = Axis(nd - 1);
    let mut out = Vec::with_capacity(pred.len() / (n_lat * n_lon).max(1));
    let mut acc = 0.0;
    for (k, (lp, lt)) in pred
        .lanes(lon_axis)
        .into_iter()
        .zip(truth.lanes(lon_axis))
        .enumerate()
    {
        let row = k % n_lat;
        let sq: f64 = lp.iter().zip(lt.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
        acc += weights.w[row] * sq;
        if row == n_lat - 1 {
            out.push(acc / n_cells);
            acc = 0.0;
        }
    }
    out
}

/// Latitude-weighted MSE, averaged over every leading axis.
pub fn weighted_mse<S1, S2, D>(
    pred: &ArrayBase<S1, D>,
    truth: &ArrayBase<S2, D>,
    weights: &LatWeights,
) -> Result<f64, GridError>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    check_pair(pred, truth, weights)?;
    let per = per_forecast_mse(pred, truth, weights);
    if per.is_empty() {
        return Err(GridError::EmptyForecastSet);
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Latitude-weighted RMSE: square root per forecast, then the mean over
/// forecasts. A forecast is one `(lat, lon)` slab of the input.
pub fn weighted_rmse<S1, S2, D>(
    preds: &ArrayBase<S1, D>,
    truths: &ArrayBase<S2, D>,
    weights: &LatWeights,
) -> Result<f64, GridError>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    let per = forecast_rmses(preds, truths, weights)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Per-forecast weighted RMSE values (the terms averaged by [`weighted_rmse`]).
pub fn forecast_rmses<S1, S2, D>(
    preds: &ArrayBase<S1, D>,
    truths: &ArrayBase<S2, D>,
    weights: &LatWeights,
) -> Result<Vec<f64>, GridError>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    check_pair(preds, truths, weights)?;
    let per = per_forecast_mse(preds, truths, weights);
    if per.is_empty() {
        return Err(GridError::EmptyForecastSet);
    }
    Ok(per.into_iter().map(f64::sqrt).collect())
}
