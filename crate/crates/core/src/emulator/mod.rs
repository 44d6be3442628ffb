//! Emulator zoo and training loop.
//!
//! Every emulator maps one year of forcing `[12][4][lat][lon]` to responses
//! `[12][2][lat][lon]` with channels (TAS, PR).

pub mod climatology;
pub mod mlp;
pub mod pattern;
pub mod schedule;

use std::fmt;
use std::str::FromStr;

use log::debug;
use ndarray::{Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ChunkKey, ChunkView, Dataset, MONTHS_PER_YEAR};
use crate::grid::{lat_weights, GridError, GridSpec, LatWeights};
use crate::rng::{derive_seed, shuffle, Pcg32};
use crate::split::{Part, SplitPlan};

pub use climatology::{fit_climatology, Climatology};
pub use mlp::{loss_and_gradient, norm_stats, MlpGradient, MlpParams};
pub use pattern::{fit_pattern_scaling, PatternScaling};
pub use schedule::{lr_schedule, OptimizerKind, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EmulatorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training set is empty")]
    EmptyTraining,
    #[error("design has {rows} rows but at least {needed} are required")]
    TooFewRows { rows: usize, needed: usize },
    #[error("design matrix is rank deficient at column {column}; use a ridge strength > 0")]
    Singular { column: usize },
    #[error("training diverged (non-finite loss){}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Divergence { epoch: Option<usize> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("chunk {0} not found in dataset")]
    MissingChunk(ChunkKey),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmulatorKind {
    Climatology,
    PatternScaling,
    Mlp,
}

impl EmulatorKind {
    pub const ALL: [EmulatorKind; 3] = [
        EmulatorKind::Climatology,
        EmulatorKind::PatternScaling,
        EmulatorKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmulatorKind::Climatology => "climatology",
            EmulatorKind::PatternScaling => "pattern_scaling",
            EmulatorKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for EmulatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmulatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmulatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown emulator kind {s:?}"))
    }
}

/// A trained emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Emulator {
    Climatology(Climatology),
    PatternScaling(PatternScaling),
    Mlp(MlpParams),
}

impl Emulator {
    pub fn kind(&self) -> EmulatorKind {
        match self {
            Emulator::Climatology(_) => EmulatorKind::Climatology,
            Emulator::PatternScaling(_) => EmulatorKind::PatternScaling,
            Emulator::Mlp(_) => EmulatorKind::Mlp,
        }
    }

    /// Predict one chunk; output channels are (TAS, PR).
    pub fn predict(&self, inputs: ArrayView4<'_, f64>) -> Result<Array4<f64>, EmulatorError> {
        if inputs.len_of(Axis(0)) != MONTHS_PER_YEAR {
            return Err(EmulatorError::Shape(format!(
                "expected {MONTHS_PER_YEAR} months, got {}",
                inputs.len_of(Axis(0))
            )));
        }
        let out = match self {
            Emulator::Climatology(m) => m.predict(inputs)?,
            Emulator::PatternScaling(m) => m.predict(inputs)?,
            Emulator::Mlp(m) => m.predict(inputs)?,
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EmulatorError::Divergence { epoch: None });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: Option<f64>,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub emulator: Emulator,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (best validation loss).
    pub selected_epoch: usize,
}

/// Everything needed to reload and re-check a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: EmulatorKind,
    pub grid: GridSpec,
    pub oracle_id: String,
    pub plan: String,
    pub train_config: TrainConfig,
    pub selected_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub model: Emulator,
}

pub fn views<'a>(dataset: &'a Dataset, keys: &[ChunkKey]) -> Result<Vec<ChunkView<'a>>, EmulatorError> {
    keys.iter()
        .map(|k| dataset.chunk(k).ok_or_else(|| EmulatorError::MissingChunk(k.clone())))
        .collect()
}

/// Mean latitude-weighted MSE of `emulator` over `chunks`.
pub fn mean_loss(
    emulator: &Emulator,
    chunks: &[ChunkView<'_>],
    weights: &LatWeights,
) -> Result<f64, EmulatorError> {
    let mut total = 0.0;
    for c in chunks {
        let pred = emulator.predict(c.inputs)?;
        total += crate::grid::weighted_mse(&pred, &c.outputs, weights)?;
    }
    Ok(total / chunks.len().max(1) as f64)
}

/// Train one emulator on `oracle`'s share of `plan`.
///
/// Closed-form kinds produce a single history entry. The MLP runs
/// `config.epochs` epochs of mini-batch optimisation; batch order comes from
/// a per-epoch shuffle seeded by `config.seed`, and the returned parameters
/// are those of the epoch with the lowest validation loss.
pub fn train(
    kind: EmulatorKind,
    plan: &SplitPlan,
    dataset: &Dataset,
    oracle: &str,
    config: &TrainConfig,
) -> Result<TrainOutcome, EmulatorError> {
    config.validate()?;
    let weights = lat_weights(&dataset.grid);
    let train_keys = plan.keys_for(Part::Train, oracle);
    let val_keys = plan.keys_for(Part::Val, oracle);
    let train_views = views(dataset, &train_keys)?;
    let val_views = views(dataset, &val_keys)?;
    if train_views.is_empty() {
        return Err(EmulatorError::EmptyTraining);
    }

    let closed_form = |emulator: Emulator| -> Result<TrainOutcome, EmulatorError> {
        let train_loss = mean_loss(&emulator, &train_views, &weights)?;
        let val_loss = if val_views.is_empty() {
            None
        } else {
            Some(mean_loss(&emulator, &val_views, &weights)?)
        };
        if !train_loss.is_finite() {
            return Err(EmulatorError::Divergence { epoch: Some(0) });
        }
        Ok(TrainOutcome {
            emulator,
            history: vec![EpochRecord {
                epoch: 0,
                lr: None,
                train_loss,
                val_loss,
            }],
            selected_epoch: 0,
        })
    };

    match kind {
        EmulatorKind::Climatology => closed_form(Emulator::Climatology(fit_climatology(&train_views)?)),
        EmulatorKind::PatternScaling => closed_form(Emulator::PatternScaling(fit_pattern_scaling(
            &train_views,
            &weights,
            config.ridge_lambda,
        )?)),
        EmulatorKind::Mlp => train_mlp(&train_views, &val_views, &dataset.grid, &weights, config),
    }
}

fn train_mlp(
    train_views: &[ChunkView<'_>],
    val_views: &[ChunkView<'_>],
    grid: &GridSpec,
    weights: &LatWeights,
    config: &TrainConfig,
) -> Result<TrainOutcome, EmulatorError> {
    let stats = norm_stats(train_views)?;
    let mut init_rng = Pcg32::from_seed(derive_seed(config.seed, &["mlp", "init"]));
    let mut shuffle_rng = Pcg32::from_seed(derive_seed(config.seed, &["mlp", "shuffle"]));
    let mut params = MlpParams::init(stats, grid.n_lat, grid.n_lon, config.hidden_width, &mut init_rng);
    let col_w = params.column_weights(weights);

    let (x_train, y_train) = params.assemble(train_views)?;
    let val = if val_views.is_empty() {
        None
    } else {
        Some(params.assemble(val_views)?)
    };

    let mut optimizer = {
        let slots = params.take_slots();
        let opt = schedule::Optimizer::new(config, &slots);
        params.set_slots(slots);
        opt
    };

    let mut order: Vec<usize> = (0..train_views.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, MlpParams)> = None;
    for epoch in 0..config.epochs {
        let lr = lr_schedule(config, epoch)?;
        shuffle(&mut order, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<usize> = batch
                .iter()
                .flat_map(|&k| k * MONTHS_PER_YEAR..(k + 1) * MONTHS_PER_YEAR)
                .collect();
            let xb = x_train.select(Axis(0), &rows);
            let yb = y_train.select(Axis(0), &rows);
            let (loss, grad) = params.loss_grad_rows(xb.view(), yb.view(), &col_w);
            if !loss.is_finite() || !grad.max_abs().is_finite() {
                return Err(EmulatorError::Divergence { epoch: Some(epoch) });
            }
            loss_sum += loss * batch.len() as f64;
            let mut slots = params.take_slots();
            optimizer.step(&mut slots, &grad.into_slots(), lr);
            params.set_slots(slots);
        }
        if !params.is_finite() {
            return Err(EmulatorError::Divergence { epoch: Some(epoch) });
        }
        let train_loss = loss_sum / train_views.len() as f64;
        let val_loss = val
            .as_ref()
            .map(|(xv, yv)| params.loss_rows(xv.view(), yv.view(), &col_w));
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(EmulatorError::Divergence { epoch: Some(epoch) });
            }
        }
        debug!("epoch {epoch}: lr {lr:.3e} train {train_loss:.6} val {val_loss:?}");
        history.push(EpochRecord {
            epoch,
            lr: Some(lr),
            train_loss,
            val_loss,
        });
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, selected_epoch, best_params) = best.expect("at least one epoch");
    // Without validation data, keep the final parameters.
    let (selected_epoch, chosen) = if val.is_some() {
        (selected_epoch, best_params)
    } else {
        (config.epochs - 1, params)
    };
    Ok(TrainOutcome {
        emulator: Emulator::Mlp(chosen),
        history,
        selected_epoch,
    })
}

#[cfg(test)]
mod tests;
