//! Loss, Adam, silver calibration and the refinement training loop.

mod adam;
mod calibration;
mod runner;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use calibration::{
    calibrate_silver, count_baseline, count_scores, fit_logistic_1d, Calibration, LogisticFit,
    LOGISTIC_MAX_ITER, LOGISTIC_TOLERANCE,
};
pub use runner::{cross_validate_training, train_loop, CvRun, EpochRecord, TrainOutcome};

use crate::error::{Error, Result};
use crate::numerics::bce_value;
use crate::preprocess::TruncationMode;

/// Clamped binary cross-entropy; `y` may be soft.
pub fn bce_loss(p: f64, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Contract(format!("BCE target must lie in [0, 1], got {y}")));
    }
    Ok(bce_value(p, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub outer_rounds: usize,
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Gold replication factor; `None` means `max(1, round(n_silver / n_gold))`.
    pub oversample_r: Option<usize>,
    pub seed: u64,
    pub refinement_enabled: bool,
    pub truncation: TruncationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            outer_rounds: 3,
            epochs_per_round: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            oversample_r: None,
            seed: 0,
            refinement_enabled: true,
            truncation: TruncationMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_rounds == 0 || self.epochs_per_round == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "outer_rounds, epochs_per_round and batch_size must be at least 1".into(),
            ));
        }
        if self.oversample_r == Some(0) {
            return Err(Error::Config("oversample_r must be at least 1".into()));
        }
        let positive = [self.learning_rate, self.adam_eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("learning_rate and adam_eps must be positive".into()));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("Adam betas must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}
