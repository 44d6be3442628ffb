use ndarray::{Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use super::EmulatorError;
use crate::dataset::ChunkView;

/// Per-(month, variable, cell) mean of the training outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub mean: Array4<f64>,
}

pub fn fit_climatology(train: &[ChunkView<'_>]) -> Result<Climatology, EmulatorError> {
    let first = train.first().ok_or(EmulatorError::EmptyTraining)?;
    let mut sum = Array4::<f64>::zeros(first.outputs.raw_dim());
    for chunk in train {
        if chunk.outputs.raw_dim() != sum.raw_dim() {
            return Err(EmulatorError::Shape(format!(
                "training chunk outputs {:?} vs {:?}",
                chunk.outputs.shape(),
                sum.shape()
            )));
        }
        sum += &chunk.outputs;
    }
    Ok(Climatology {
        mean: sum / train.len() as f64,
    })
}

impl Climatology {
    pub fn predict(&self, inputs: ArrayView4<'_, f64>) -> Result<Array4<f64>, EmulatorError> {
        let (months, _, n_lat, n_lon) = inputs.dim();
        let (m, _, ml, mn) = self.mean.dim();
        if months != m || n_lat != ml || n_lon != mn {
            return Err(EmulatorError::Shape(format!(
                "inputs {:?} incompatible with climatology {:?}",
                inputs.shape(),
                self.mean.shape()
            )));
        }
        Ok(self.mean.clone())
    }
}
