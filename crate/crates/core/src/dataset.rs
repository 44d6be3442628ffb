//! In-memory scenario datasets and the one-year chunk view used as the
//! sample unit by splits and training.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{s, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridSpec;

/// Months per chunk (sequence length).
pub const MONTHS_PER_YEAR: usize = 12;
pub const N_INPUTS: usize = 4;
pub const N_OUTPUTS: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("series has {months} months, not a whole number of years")]
    PartialYear { months: usize },
    #[error("series shape mismatch: {0}")]
    Shape(String),
    #[error("no series for oracle {oracle} / scenario {scenario}")]
    MissingSeries { oracle: String, scenario: ScenarioId },
}

/// Scenario label such as `historical` or `ssp245`. Ordering is
/// lexicographic on the label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScenarioId(pub String);

impl ScenarioId {
    pub const HISTORICAL: &'static str = "historical";
    pub const SSP126: &'static str = "ssp126";
    pub const SSP245: &'static str = "ssp245";
    pub const SSP370: &'static str = "ssp370";
    pub const SSP585: &'static str = "ssp585";

    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_ssp(&self) -> bool {
        self.0.starts_with("ssp")
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ScenarioId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A scenario together with the inclusive calendar years it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub start_year: i32,
    pub end_year: i32,
}

impl ScenarioSpec {
    pub fn new(id: &str, start_year: i32, end_year: i32) -> Self {
        Self {
            id: ScenarioId::new(id),
            start_year,
            end_year,
        }
    }

    pub fn n_years(&self) -> usize {
        (self.end_year - self.start_year + 1).max(0) as usize
    }

    pub fn covers(&self, year: i32) -> bool {
        (self.start_year..=self.end_year).contains(&year)
    }

    /// historical 1850-2014 plus the four SSPs over 2015-2100.
    pub fn standard_set() -> Vec<ScenarioSpec> {
        vec![
            ScenarioSpec::new(ScenarioId::HISTORICAL, 1850, 2014),
            ScenarioSpec::new(ScenarioId::SSP126, 2015, 2100),
            ScenarioSpec::new(ScenarioId::SSP245, 2015, 2100),
            ScenarioSpec::new(ScenarioId::SSP370, 2015, 2100),
            ScenarioSpec::new(ScenarioId::SSP585, 2015, 2100),
        ]
    }
}

/// Monthly forcing inputs `[month][4][lat][lon]` and responses
/// `[month][2][lat][lon]` for one (oracle, scenario).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSeries {
    pub scenario: ScenarioId,
    pub oracle_id: String,
    pub start_year: i32,
    pub end_year: i32,
    pub inputs: Array4<f64>,
    pub outputs: Array4<f64>,
}

impl ScenarioSeries {
    pub fn n_months(&self) -> usize {
        self.inputs.len_of(Axis(0))
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<(), DatasetError> {
        let months = self.n_months();
        let years = (self.end_year - self.start_year + 1).max(0) as usize;
        let want_in = (months, N_INPUTS, grid.n_lat, grid.n_lon);
        let want_out = (months, N_OUTPUTS, grid.n_lat, grid.n_lon);
        if self.inputs.dim() != want_in || self.outputs.dim() != want_out {
            return Err(DatasetError::Shape(format!(
                "inputs {:?} / outputs {:?}, expected {:?} / {:?}",
                self.inputs.dim(),
                self.outputs.dim(),
                want_in,
                want_out
            )));
        }
        if months != years * MONTHS_PER_YEAR {
            return Err(DatasetError::Shape(format!(
                "{months} months for {years} years"
            )));
        }
        Ok(())
    }
}

/// Identifies one year chunk in a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkKey {
    pub oracle_id: String,
    pub scenario: ScenarioId,
    pub year: i32,
}

impl ChunkKey {
    pub fn new(oracle_id: &str, scenario: &str, year: i32) -> Self {
        Self {
            oracle_id: oracle_id.to_string(),
            scenario: ScenarioId::new(scenario),
            year,
        }
    }
}

impl fmt::Display for ChunkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.oracle_id, self.scenario, self.year)
    }
}

/// One calendar year of a series with owned tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct YearChunk {
    pub oracle_id: String,
    pub scenario: ScenarioId,
    pub year: i32,
    pub inputs: Array4<f64>,
    pub outputs: Array4<f64>,
}

/// Borrowed view of one year chunk: 12 months of inputs and outputs.
#[derive(Debug, Clone, Copy)]
pub struct ChunkView<'a> {
    pub inputs: ArrayView4<'a, f64>,
    pub outputs: ArrayView4<'a, f64>,
}

/// Split a series into chronological one-year chunks.
pub fn chunk_years(series: &ScenarioSeries) -> Result<Vec<YearChunk>, DatasetError> {
    let months = series.n_months();
    if months % MONTHS_PER_YEAR != 0 || series.outputs.len_of(Axis(0)) != months {
        return Err(DatasetError::PartialYear { months });
    }
    Ok((0..months / MONTHS_PER_YEAR)
        .map(|k| {
            let range = s![k * MONTHS_PER_YEAR..(k + 1) * MONTHS_PER_YEAR, .., .., ..];
            YearChunk {
                oracle_id: series.oracle_id.clone(),
                scenario: series.scenario.clone(),
                year: series.start_year + k as i32,
                inputs: series.inputs.slice(range).to_owned(),
                outputs: series.outputs.slice(range).to_owned(),
            }
        })
        .collect())
}

/// Collection of series keyed by (oracle, scenario) on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub oracles: Vec<String>,
    pub scenarios: Vec<ScenarioSpec>,
    pub series: BTreeMap<(String, ScenarioId), ScenarioSeries>,
}

impl Dataset {
    pub fn get(&self, oracle: &str, scenario: &ScenarioId) -> Option<&ScenarioSeries> {
        self.series.get(&(oracle.to_string(), scenario.clone()))
    }

    pub fn has_scenario(&self, id: &str) -> bool {
        self.scenarios.iter().any(|s| s.id.as_str() == id)
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioSpec> {
        self.scenarios.iter().find(|s| s.id.as_str() == id)
    }

    /// View of the twelve months of `key`, if present.
    pub fn chunk(&self, key: &ChunkKey) -> Option<ChunkView<'_>> {
        let series = self.get(&key.oracle_id, &key.scenario)?;
        if key.year < series.start_year || key.year > series.end_year {
            return None;
        }
        let k = (key.year - series.start_year) as usize * MONTHS_PER_YEAR;
        let range = s![k..k + MONTHS_PER_YEAR, .., .., ..];
        Some(ChunkView {
            inputs: series.inputs.slice(range),
            outputs: series.outputs.slice(range),
        })
    }

    /// All chunk keys of one oracle and scenario, in year order.
    pub fn scenario_keys(&self, oracle: &str, scenario: &str) -> Vec<ChunkKey> {
        match self.get(oracle, &ScenarioId::new(scenario)) {
            Some(s) => (s.start_year..=s.end_year)
                .map(|y| ChunkKey::new(oracle, scenario, y))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Every chunk in the dataset, sorted.
    pub fn all_keys(&self) -> Vec<ChunkKey> {
        let mut keys: Vec<ChunkKey> = self
            .series
            .values()
            .flat_map(|s| {
                (s.start_year..=s.end_year).map(move |y| ChunkKey {
                    oracle_id: s.oracle_id.clone(),
                    scenario: s.scenario.clone(),
                    year: y,
                })
            })
            .collect();
        keys.sort();
        keys
    }

    pub fn contains(&self, key: &ChunkKey) -> bool {
        self.get(&key.oracle_id, &key.scenario)
            .is_some_and(|s| (s.start_year..=s.end_year).contains(&key.year))
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for ((oracle, scenario), series) in &self.series {
            if &series.oracle_id != oracle || &series.scenario != scenario {
                return Err(DatasetError::Shape(format!(
                    "series keyed {oracle}/{scenario} labelled {}/{}",
                    series.oracle_id, series.scenario
                )));
            }
            series.validate(&self.grid)?;
        }
        for oracle in &self.oracles {
            for sc in &self.scenarios {
                if self.get(oracle, &sc.id).is_none() {
                    return Err(DatasetError::MissingSeries {
                        oracle: oracle.clone(),
                        scenario: sc.id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::concatenate;
    use proptest::prelude::*;

    fn series(years: usize, months_extra: usize) -> ScenarioSeries {
        let months = years * 12 + months_extra;
        ScenarioSeries {
            scenario: ScenarioId::new("historical"),
            oracle_id: "o".into(),
            start_year: 1850,
            end_year: 1850 + years as i32 - 1,
            inputs: Array4::from_shape_fn((months, 4, 2, 3), |(t, g, i, j)| {
                (t * 1000 + g * 100 + i * 10 + j) as f64
            }),
            outputs: Array4::from_shape_fn((months, 2, 2, 3), |(t, v, i, j)| {
                -((t * 1000 + v * 100 + i * 10 + j) as f64)
            }),
        }
    }

    #[test]
    fn thirteen_months_rejected() {
        let s = series(1, 1);
        assert_eq!(chunk_years(&s), Err(DatasetError::PartialYear { months: 13 }));
    }

    #[test]
    fn chunk_shapes_and_years() {
        let s = series(3, 0);
        let chunks = chunk_years(&s).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[2].year, 1852);
        assert_eq!(chunks[0].inputs.dim(), (12, 4, 2, 3));
        assert_eq!(chunks[0].outputs.dim(), (12, 2, 2, 3));
        assert_eq!(chunks[1].inputs[[0, 0, 0, 0]], 12_000.0);
    }

    proptest! {
        #[test]
        fn chunks_partition_the_series(years in 1usize..6) {
            let s = series(years, 0);
            let chunks = chunk_years(&s).unwrap();
            let ins: Vec<_> = chunks.iter().map(|c| c.inputs.view()).collect();
            let outs: Vec<_> = chunks.iter().map(|c| c.outputs.view()).collect();
            prop_assert_eq!(concatenate(Axis(0), &ins).unwrap(), s.inputs.clone());
            prop_assert_eq!(concatenate(Axis(0), &outs).unwrap(), s.outputs.clone());
        }
    }
}
