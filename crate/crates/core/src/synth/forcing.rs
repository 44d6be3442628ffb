//! Scenario forcing trajectories and their spatial rendering.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::RangeInclusive;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::dataset::{ScenarioSpec, MONTHS_PER_YEAR};
use crate::grid::{lat_weights, Field, GridSpec, Variable};

/// Shape of the ramp between `start_level` and `end_level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RampShape {
    Linear,
    /// Logistic curve centred at `midpoint` (fraction of the scenario span),
    /// rescaled so it runs exactly from 0 to 1 over the span.
    Logistic { midpoint: f64, steepness: f64 },
}

impl RampShape {
    /// Ramp fraction at `tau` in `[0, 1]`.
    pub fn fraction(self, tau: f64) -> f64 {
        match self {
            RampShape::Linear => tau,
            RampShape::Logistic {
                midpoint,
                steepness,
            } => {
                let sig = |x: f64| 1.0 / (1.0 + (-steepness * (x - midpoint)).exp());
                let (lo, hi) = (sig(0.0), sig(1.0));
                (sig(tau) - lo) / (hi - lo)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_level: f64,
    pub end_level: f64,
    pub ramp: RampShape,
}

impl Trajectory {
    pub fn linear(start_level: f64, end_level: f64) -> Self {
        Self {
            start_level,
            end_level,
            ramp: RampShape::Linear,
        }
    }

    pub fn logistic(start_level: f64, end_level: f64, midpoint: f64, steepness: f64) -> Self {
        Self {
            start_level,
            end_level,
            ramp: RampShape::Logistic {
                midpoint,
                steepness,
            },
        }
    }

    pub fn level(&self, tau: f64) -> f64 {
        self.start_level + (self.end_level - self.start_level) * self.ramp.fraction(tau)
    }
}

/// Smooth positive spatial pattern:
/// `floor + peak * exp(-((lat - center_lat) / width_deg)^2) * (1 + lon_amp * cos(lon))`,
/// rescaled to an area-weighted mean of 1 on the target grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub floor: f64,
    pub peak: f64,
    pub center_lat: f64,
    pub width_deg: f64,
    pub lon_amp: f64,
}

impl PatternSpec {
    pub fn uniform() -> Self {
        Self {
            floor: 1.0,
            peak: 0.0,
            center_lat: 0.0,
            width_deg: 1.0,
            lon_amp: 0.0,
        }
    }

    pub fn render(&self, grid: &GridSpec, variable: Variable) -> Result<Field, SynthError> {
        let raw = Array2::from_shape_fn((grid.n_lat, grid.n_lon), |(i, j)| {
            let lat = grid.lat_deg[i];
            let lon = grid.lon_deg[j] * PI / 180.0;
            let band = (-((lat - self.center_lat) / self.width_deg).powi(2)).exp();
            self.floor + self.peak * band * (1.0 + self.lon_amp * lon.cos())
        });
        let mean = area_mean(&raw, grid);
        if !(mean > 0.0) || raw.iter().any(|&v| v <= 0.0) {
            return Err(SynthError::Config(format!(
                "pattern for {variable} must be strictly positive"
            )));
        }
        Ok(Field::new(grid, variable, raw / mean)?)
    }
}

/// Area-weighted mean of a 2-D field.
pub fn area_mean(values: &Array2<f64>, grid: &GridSpec) -> f64 {
    let w = lat_weights(grid);
    let total: f64 = values
        .outer_iter()
        .zip(&w.w)
        .map(|(row, wi)| wi * row.sum())
        .sum();
    total / grid.n_cells() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcerSpec {
    pub variable: Variable,
    pub seasonal_amplitude: f64,
    pub pattern: PatternSpec,
}

/// Forcer definitions plus one trajectory per (scenario, forcer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingParams {
    /// In channel order CO2, CH4, BC, SO2.
    pub forcers: Vec<ForcerSpec>,
    /// Scenario id -> one trajectory per forcer, same order as `forcers`.
    pub trajectories: BTreeMap<String, Vec<Trajectory>>,
}

impl ForcingParams {
    pub fn forcer_index(&self, forcer: Variable) -> Option<usize> {
        self.forcers.iter().position(|f| f.variable == forcer)
    }

    pub fn trajectory(&self, scenario: &str, forcer: Variable) -> Option<&Trajectory> {
        let idx = self.forcer_index(forcer)?;
        self.trajectories.get(scenario)?.get(idx)
    }

    pub fn validate(&self, scenarios: &[ScenarioSpec]) -> Result<(), SynthError> {
        let order: Vec<Variable> = self.forcers.iter().map(|f| f.variable).collect();
        if order != Variable::INPUTS {
            return Err(SynthError::Config(format!(
                "forcers must be CO2, CH4, BC, SO2 in that order, got {order:?}"
            )));
        }
        for sc in scenarios {
            match self.trajectories.get(sc.id.as_str()) {
                Some(t) if t.len() == self.forcers.len() => {}
                Some(t) => {
                    return Err(SynthError::Config(format!(
                        "scenario {} has {} trajectories, expected {}",
                        sc.id,
                        t.len(),
                        self.forcers.len()
                    )))
                }
                None => {
                    return Err(SynthError::Config(format!(
                        "no forcing trajectories for scenario {}",
                        sc.id
                    )))
                }
            }
        }
        for (name, trajs) in &self.trajectories {
            for t in trajs {
                if let RampShape::Logistic { steepness, .. } = t.ramp {
                    if !(steepness > 0.0) {
                        return Err(SynthError::Config(format!(
                            "scenario {name}: logistic steepness must be positive"
                        )));
                    }
                }
            }
        }
        // Continuity at the historical -> SSP boundary.
        if let Some(hist) = self.trajectories.get("historical") {
            for (name, trajs) in self.trajectories.iter().filter(|(n, _)| n.starts_with("ssp")) {
                for (k, (h, s)) in hist.iter().zip(trajs).enumerate() {
                    if (h.end_level - s.start_level).abs() > 1e-12 {
                        return Err(SynthError::Config(format!(
                            "{name}: {} start level {} differs from historical end level {}",
                            self.forcers[k].variable, s.start_level, h.end_level
                        )));
                    }
                }
            }
        }
        // Emission ordering for the greenhouse gases, when all four SSPs exist.
        let ladder = ["ssp126", "ssp245", "ssp370", "ssp585"];
        if ladder.iter().all(|s| self.trajectories.contains_key(*s)) {
            for gas in [Variable::Co2, Variable::Ch4] {
                let ends: Vec<f64> = ladder
                    .iter()
                    .map(|s| self.trajectory(s, gas).map(|t| t.end_level).unwrap_or(f64::NAN))
                    .collect();
                if !ends.windows(2).all(|w| w[0] < w[1]) {
                    return Err(SynthError::Config(format!(
                        "{gas} end levels must increase ssp126 < ssp245 < ssp370 < ssp585, got {ends:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Monthly global-mean level of one forcer over `years` of `scenario`.
///
/// Month `k` of the scenario sits at `tau = (k + 0.5) / n_months`, so the
/// ramp runs across the scenario's whole coverage regardless of the
/// requested slice; a seasonal term `amp * sin(2*pi*m/12)` is added.
pub fn forcing_trajectory(
    params: &ForcingParams,
    scenario: &ScenarioSpec,
    forcer: Variable,
    years: RangeInclusive<i32>,
) -> Result<Vec<f64>, SynthError> {
    if years.is_empty() || !scenario.covers(*years.start()) || !scenario.covers(*years.end()) {
        return Err(SynthError::YearRange {
            scenario: scenario.id.to_string(),
            start: *years.start(),
            end: *years.end(),
        });
    }
    let idx = params
        .forcer_index(forcer)
        .ok_or_else(|| SynthError::Config(format!("unknown forcer {forcer}")))?;
    let traj = params.trajectory(scenario.id.as_str(), forcer).ok_or_else(|| {
        SynthError::Config(format!("no trajectory for {} / {forcer}", scenario.id))
    })?;
    let amp = params.forcers[idx].seasonal_amplitude;
    let total = (scenario.n_years() * MONTHS_PER_YEAR) as f64;
    let first = (*years.start() - scenario.start_year) as usize * MONTHS_PER_YEAR;
    let last = (*years.end() - scenario.start_year + 1) as usize * MONTHS_PER_YEAR;
    Ok((first..last)
        .map(|k| {
            let tau = (k as f64 + 0.5) / total;
            let month = (k % MONTHS_PER_YEAR) as f64;
            traj.level(tau) + amp * (2.0 * PI * month / 12.0).sin()
        })
        .collect())
}

/// `field(t, x) = trajectory(t) * pattern(x)`.
pub fn render_forcing_fields(
    trajectory: &[f64],
    pattern: &Field,
    grid: &GridSpec,
) -> Result<Array3<f64>, SynthError> {
    if pattern.values.dim() != (grid.n_lat, grid.n_lon) {
        return Err(SynthError::Shape(format!(
            "pattern {:?} does not match grid {}x{}",
            pattern.values.dim(),
            grid.n_lat,
            grid.n_lon
        )));
    }
    let mut out = Array3::zeros((trajectory.len(), grid.n_lat, grid.n_lon));
    for (mut slab, &level) in out.outer_iter_mut().zip(trajectory) {
        slab.assign(&(&pattern.values * level));
    }
    Ok(out)
}
