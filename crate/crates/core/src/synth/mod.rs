//! Synthetic scenario generator with a planted ground-truth response.
//!
//! Inputs are four forcing agents rendered as `trajectory(t) * pattern(x)`;
//! outputs come from an [`OracleConfig`]. Five default oracles with distinct
//! sensitivities and noise levels play the role of independent climate
//! models.

pub mod defaults;
pub mod forcing;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, ScenarioSeries, ScenarioSpec, N_INPUTS};
use crate::grid::{build_grid, GridError, GridSpec, Variable};
use crate::rng::derive_seed;

pub use forcing::{
    forcing_trajectory, render_forcing_fields, ForcerSpec, ForcingParams, PatternSpec, RampShape,
    Trajectory,
};
pub use oracle::{simulate_oracle, OracleConfig, OracleSpec};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("years {start}..={end} outside coverage of scenario {scenario}")]
    YearRange {
        scenario: String,
        start: i32,
        end: i32,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSize {
    pub n_lat: usize,
    pub n_lon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub grid: GridSize,
    pub scenarios: Vec<ScenarioSpec>,
    pub forcing: ForcingParams,
    pub oracles: Vec<OracleSpec>,
}

impl Default for GenerationConfig {
    /// 36 x 24 grid, all five scenarios, five default oracles.
    fn default() -> Self {
        Self {
            grid: GridSize {
                n_lat: 24,
                n_lon: 36,
            },
            scenarios: ScenarioSpec::standard_set(),
            forcing: defaults::default_forcing(),
            oracles: defaults::default_oracles(),
        }
    }
}

impl GenerationConfig {
    /// Same as the default but on a 12 x 8 (lon x lat) grid.
    pub fn small() -> Self {
        Self {
            grid: GridSize { n_lat: 8, n_lon: 12 },
            ..Self::default()
        }
    }

    pub fn build_grid(&self) -> Result<GridSpec, SynthError> {
        Ok(build_grid(self.grid.n_lat as i64, self.grid.n_lon as i64)?)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.build_grid()?;
        if self.oracles.is_empty() {
            return Err(SynthError::Config("oracle list is empty".into()));
        }
        if self.scenarios.is_empty() {
            return Err(SynthError::Config("scenario list is empty".into()));
        }
        let mut ids = BTreeSet::new();
        for o in &self.oracles {
            o.validate()?;
            if !ids.insert(o.id.as_str()) {
                return Err(SynthError::Config(format!("duplicate oracle id {}", o.id)));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &self.scenarios {
            if s.end_year < s.start_year {
                return Err(SynthError::Config(format!(
                    "scenario {} has end year before start year",
                    s.id
                )));
            }
            if s.id.as_str().is_empty() || s.id.as_str().contains(['/', '\\']) {
                return Err(SynthError::Config(format!("bad scenario id {:?}", s.id.as_str())));
            }
            if !seen.insert(s.id.clone()) {
                return Err(SynthError::Config(format!("duplicate scenario {}", s.id)));
            }
        }
        self.forcing.validate(&self.scenarios)?;
        let pairs: Vec<(Vec<u64>, u64)> = self
            .oracles
            .iter()
            .map(|o| {
                (
                    o.tas_sensitivity.iter().map(|b| b.to_bits()).collect(),
                    o.noise_sigma.to_bits(),
                )
            })
            .collect();
        let distinct: BTreeSet<_> = pairs.iter().collect();
        if distinct.len() != pairs.len() {
            return Err(SynthError::Config(
                "oracles must differ in (sensitivity, noise_sigma)".into(),
            ));
        }
        Ok(())
    }
}

/// Forcing inputs `[months][4][lat][lon]` for one scenario over its full coverage.
pub fn scenario_inputs(
    gen: &GenerationConfig,
    grid: &GridSpec,
    scenario: &ScenarioSpec,
) -> Result<Array4<f64>, SynthError> {
    let months = scenario.n_years() * crate::dataset::MONTHS_PER_YEAR;
    let mut inputs = Array4::zeros((months, N_INPUTS, grid.n_lat, grid.n_lon));
    for (g, forcer) in gen.forcing.forcers.iter().enumerate() {
        let traj = forcing_trajectory(
            &gen.forcing,
            scenario,
            forcer.variable,
            scenario.start_year..=scenario.end_year,
        )?;
        let pattern = forcer.pattern.render(grid, forcer.variable)?;
        let fields = render_forcing_fields(&traj, &pattern, grid)?;
        inputs.index_axis_mut(Axis(1), g).assign(&fields);
    }
    Ok(inputs)
}

/// Generate every (oracle, scenario) series. Noise sub-seeds are
/// `derive_seed(seed, [oracle_id, scenario])`; series are independent and
/// built in parallel.
pub fn build_dataset(gen: &GenerationConfig, seed: u64) -> Result<Dataset, SynthError> {
    gen.validate()?;
    let grid = gen.build_grid()?;
    let inputs: BTreeMap<_, _> = gen
        .scenarios
        .iter()
        .map(|s| Ok((s.id.clone(), scenario_inputs(gen, &grid, s)?)))
        .collect::<Result<_, SynthError>>()?;
    let oracles: Vec<OracleConfig> = gen
        .oracles
        .iter()
        .map(|o| o.materialize(&grid))
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(&OracleConfig, &ScenarioSpec)> = oracles
        .iter()
        .flat_map(|o| gen.scenarios.iter().map(move |s| (o, s)))
        .collect();
    let series: Vec<ScenarioSeries> = jobs
        .par_iter()
        .map(|(oracle, sc)| {
            let x = &inputs[&sc.id];
            let sub_seed = derive_seed(seed, &[oracle.oracle_id.as_str(), sc.id.as_str()]);
            let y = simulate_oracle(oracle, x.view(), sub_seed)?;
            Ok(ScenarioSeries {
                scenario: sc.id.clone(),
                oracle_id: oracle.oracle_id.clone(),
                start_year: sc.start_year,
                end_year: sc.end_year,
                inputs: x.clone(),
                outputs: y,
            })
        })
        .collect::<Result<_, SynthError>>()?;

    Ok(Dataset {
        grid,
        oracles: gen.oracles.iter().map(|o| o.id.clone()).collect(),
        scenarios: gen.scenarios.clone(),
        series: series
            .into_iter()
            .map(|s| ((s.oracle_id.clone(), s.scenario.clone()), s))
            .collect(),
    })
}

/// Planted sensitivity of cell output to the area-mean forcing `g`:
/// `b_g(x) * pattern_g(x)` for TAS and `c_g(x) * pattern_g(x)` for PR.
pub fn planted_global_sensitivity(
    gen: &GenerationConfig,
    oracle: &OracleConfig,
    variable: Variable,
    forcer: usize,
) -> Result<ndarray::Array2<f64>, SynthError> {
    let grid = gen.build_grid()?;
    let spec = &gen.forcing.forcers[forcer];
    let pattern = spec.pattern.render(&grid, spec.variable)?;
    let local = match variable {
        Variable::Tas => &oracle.b[forcer],
        Variable::Pr => &oracle.c[forcer],
        other => {
            return Err(SynthError::Config(format!("{other} is not an output variable")))
        }
    };
    Ok(local * &pattern.values)
}
