//! Training configuration, learning-rate schedule and optimizers.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::EmulatorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn default_hidden() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_init: f64,
    pub decay_gamma: f64,
    /// 0 disables warm-up.
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub post_warmup_lr: f64,
    /// Chunks (years) per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    #[serde(default = "default_hidden")]
    pub hidden_width: usize,
    /// Ridge strength for pattern scaling.
    pub ridge_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr_init: 2e-4,
            decay_gamma: 0.955,
            warmup_epochs: 0,
            warmup_lr: 1e-8,
            post_warmup_lr: 5e-4,
            batch_size: 4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden_width: default_hidden(),
            ridge_lambda: 0.0,
        }
    }
}

impl TrainConfig {
    /// Five warm-up epochs from 1e-8 up to 5e-4, then exponential decay.
    pub fn with_warmup(mut self) -> Self {
        self.warmup_epochs = 5;
        self
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        let bad = |m: String| Err(EmulatorError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 || self.hidden_width == 0 {
            return bad("batch_size and hidden_width must be >= 1".into());
        }
        let rates = [self.lr_init, self.warmup_lr, self.post_warmup_lr];
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad(format!("learning rates must be positive, got {rates:?}"));
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return bad(format!("decay_gamma {} outside (0, 1]", self.decay_gamma));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("adam betas must lie in [0, 1) and eps > 0".into());
        }
        if !(self.ridge_lambda >= 0.0) {
            return bad("ridge_lambda must be >= 0".into());
        }
        Ok(())
    }
}

/// Learning rate for `epoch`.
///
/// Without warm-up: `lr_init * gamma^epoch`. With `W` warm-up epochs the rate
/// rises linearly from `warmup_lr` (epoch 0) toward `post_warmup_lr`, which
/// is reached at epoch `W` and then decays as `post_warmup_lr * gamma^(epoch - W)`.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> Result<f64, EmulatorError> {
    if epoch >= config.epochs {
        return Err(EmulatorError::Config(format!(
            "epoch {epoch} out of range for {} epochs",
            config.epochs
        )));
    }
    let w = config.warmup_epochs;
    Ok(if w == 0 {
        config.lr_init * config.decay_gamma.powi(epoch as i32)
    } else if epoch < w {
        config.warmup_lr + (config.post_warmup_lr - config.warmup_lr) * epoch as f64 / w as f64
    } else {
        config.post_warmup_lr * config.decay_gamma.powi((epoch - w) as i32)
    })
}

/// Parameter-shaped buffers shared by optimizer state and gradients.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Slots {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Slots {
    pub fn zeros_like(w1: &Array2<f64>, w2: &Array2<f64>) -> Self {
        Self {
            w1: Array2::zeros(w1.raw_dim()),
            b1: Array1::zeros(w1.ncols()),
            w2: Array2::zeros(w2.raw_dim()),
            b2: Array1::zeros(w2.ncols()),
        }
    }
}

/// First-order update rule applied to the four trainable tensors.
pub(crate) enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: i32,
        m: Slots,
        v: Slots,
    },
}

impl Optimizer {
    pub fn new(config: &TrainConfig, shape_of: &Slots) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                eps: config.adam_eps,
                step: 0,
                m: Slots::zeros_like(&shape_of.w1, &shape_of.w2),
                v: Slots::zeros_like(&shape_of.w1, &shape_of.w2),
            },
        }
    }

    pub fn step(&mut self, params: &mut Slots, grad: &Slots, lr: f64) {
        match self {
            Optimizer::Sgd => {
                params.w1.scaled_add(-lr, &grad.w1);
                params.b1.scaled_add(-lr, &grad.b1);
                params.w2.scaled_add(-lr, &grad.w2);
                params.b2.scaled_add(-lr, &grad.b2);
            }
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let (b1, b2, e) = (*beta1, *beta2, *eps);
                let c1 = 1.0 - b1.powi(*step);
                let c2 = 1.0 - b2.powi(*step);
                let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + e);
                };
                Zip::from(&mut params.w1)
                    .and(&grad.w1)
                    .and(&mut m.w1)
                    .and(&mut v.w1)
                    .for_each(update);
                Zip::from(&mut params.b1)
                    .and(&grad.b1)
                    .and(&mut m.b1)
                    .and(&mut v.b1)
                    .for_each(update);
                Zip::from(&mut params.w2)
                    .and(&grad.w2)
                    .and(&mut m.w2)
                    .and(&mut v.w2)
                    .for_each(update);
                Zip::from(&mut params.b2)
                    .and(&grad.b2)
                    .and(&mut m.b2)
                    .and(&mut v.b2)
                    .for_each(update);
            }
        }
    }
}
