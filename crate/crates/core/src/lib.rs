//! Out-of-distribution evaluation harness for climate emulators.
//!
//! Synthetic ClimateSet-shaped data with a planted response process feeds a
//! small emulator zoo; splits implement the baseline, time-period and
//! held-out-scenario protocols; results are reported as latitude-weighted
//! RMSE and percent change against the baseline.

pub mod dataset;
pub mod emulator;
pub mod eval;
pub mod grid;
pub mod harness;
pub mod io;
pub mod rng;
pub mod split;
pub mod synth;
