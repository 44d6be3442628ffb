//! Default forcing and oracle tables.
//!
//! Forcing levels are dimensionless: every forcer starts at 0 in 1850 and
//! reaches 1 at the end of 2014; SSPs continue from 1. Historical ramps use
//! different shapes per forcer so the four global means stay linearly
//! independent within the historical period alone.

use std::collections::BTreeMap;

use super::forcing::{ForcerSpec, ForcingParams, PatternSpec, Trajectory};
use super::oracle::OracleSpec;
use crate::grid::Variable;

pub fn default_forcing() -> ForcingParams {
    let forcers = vec![
        ForcerSpec {
            variable: Variable::Co2,
            seasonal_amplitude: 0.02,
            pattern: PatternSpec {
                floor: 1.0,
                peak: 0.15,
                center_lat: 30.0,
                width_deg: 40.0,
                lon_amp: 0.1,
            },
        },
        ForcerSpec {
            variable: Variable::Ch4,
            seasonal_amplitude: 0.03,
            pattern: PatternSpec {
                floor: 0.6,
                peak: 0.8,
                center_lat: 20.0,
                width_deg: 30.0,
                lon_amp: 0.3,
            },
        },
        ForcerSpec {
            variable: Variable::Bc,
            seasonal_amplitude: 0.08,
            pattern: PatternSpec {
                floor: 0.15,
                peak: 1.5,
                center_lat: 15.0,
                width_deg: 20.0,
                lon_amp: 0.6,
            },
        },
        ForcerSpec {
            variable: Variable::So2,
            seasonal_amplitude: 0.06,
            pattern: PatternSpec {
                floor: 0.1,
                peak: 1.5,
                center_lat: 40.0,
                width_deg: 18.0,
                lon_amp: 0.5,
            },
        },
    ];

    let mut trajectories = BTreeMap::new();
    trajectories.insert(
        "historical".to_string(),
        vec![
            Trajectory::logistic(0.0, 1.0, 0.8, 8.0),
            Trajectory::linear(0.0, 1.0),
            Trajectory::logistic(0.0, 1.0, 0.55, 10.0),
            Trajectory::logistic(0.0, 1.0, 0.75, 16.0),
        ],
    );
    // (CO2, CH4, BC, SO2) levels in 2100.
    let ssp_ends = [
        ("ssp126", [1.4, 0.6, 0.3, 0.2]),
        ("ssp245", [2.4, 1.3, 0.6, 0.4]),
        ("ssp370", [3.6, 2.2, 1.3, 1.1]),
        ("ssp585", [7.5, 3.4, 1.4, 1.2]),
    ];
    for (name, ends) in ssp_ends {
        let mut trajs: Vec<Trajectory> = ends.iter().map(|&e| Trajectory::linear(1.0, e)).collect();
        if name == "ssp126" {
            // CO2 peaks early and flattens under strong mitigation.
            trajs[0] = Trajectory::logistic(1.0, 1.4, 0.25, 8.0);
        }
        trajectories.insert(name.to_string(), trajs);
    }
    ForcingParams {
        forcers,
        trajectories,
    }
}

/// Five oracles with distinct sensitivities, curvature and noise.
pub fn default_oracles() -> Vec<OracleSpec> {
    let rows: [(&str, [f64; 4], f64, f64, f64, f64, [f64; 4], f64, f64); 5] = [
        // id, TAS sens, polar amp, quadratic, seasonal K, PR base, PR sens, sigma, rho
        ("oracle_a", [2.0, 0.6, 0.3, -0.8], 1.0, 0.04, 8.0, 3.0, [0.20, 0.05, -0.05, -0.10], 0.30, 0.5),
        ("oracle_b", [2.6, 0.5, 0.4, -1.0], 0.6, 0.06, 10.0, 2.6, [0.25, 0.04, -0.04, -0.08], 0.45, 0.6),
        ("oracle_c", [3.2, 0.7, 0.2, -0.6], 1.4, 0.03, 7.0, 3.4, [0.15, 0.06, -0.06, -0.12], 0.35, 0.4),
        ("oracle_d", [1.7, 0.4, 0.5, -1.2], 0.8, 0.08, 9.0, 2.8, [0.30, 0.03, -0.03, -0.09], 0.50, 0.7),
        ("oracle_e", [3.8, 0.8, 0.3, -0.9], 1.2, 0.05, 11.0, 3.2, [0.22, 0.05, -0.05, -0.11], 0.40, 0.3),
    ];
    rows.iter()
        .map(
            |&(id, tas, polar, quad, seasonal, pr_base, pr, sigma, rho)| OracleSpec {
                id: id.to_string(),
                tas_equator_k: 300.0,
                tas_pole_drop_k: 45.0,
                tas_sensitivity: tas,
                polar_amplification: polar,
                quadratic: quad,
                seasonal_k: seasonal,
                pr_base,
                pr_sensitivity: pr,
                noise_sigma: sigma,
                ar_rho: rho,
            },
        )
        .collect()
}
