//! Self-supervised unrolled reconstruction trained by k-space splitting.

pub mod checks;
pub mod loss;
pub mod model;
pub mod split;
pub mod train;

use serde::{Deserialize, Serialize};

pub use loss::{mixed_norm, ssl_loss, ssl_loss_grad};
pub use model::{unrolled_backward, unrolled_forward, unrolled_forward_tape, unrolled_from, ForwardTape, SubsetOperator, UnrolledModel};
pub use split::{lambda1_count, split_kspace, split_masks, SplitMaskPair};
pub use train::{epoch_means, infer, prepare_input, train, train_from, train_step, write_records, SslInput, TrainRecord};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivitySource {
    #[default]
    Classical,
    ClassicalPlusRefine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    pub cascades: usize,
    /// U-Net base channel width.
    pub width: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Split ratios are drawn uniformly from `[ratio_low, ratio_high]`.
    pub ratio_low: f64,
    pub ratio_high: f64,
    /// Weight of the L1 term in the mixed loss.
    pub loss_alpha: f64,
    /// Initial data-consistency step size of every cascade.
    pub eta_init: f64,
    pub seed: u64,
    /// Stop after this many epochs without improving the epoch-mean loss.
    pub patience: usize,
    pub sensitivity: SensitivitySource,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            cascades: 6,
            width: 16,
            epochs: 200,
            lr: 1e-4,
            ratio_low: 0.3,
            ratio_high: 0.99,
            loss_alpha: 0.5,
            eta_init: 0.5,
            seed: 0,
            patience: 20,
            sensitivity: SensitivitySource::Classical,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.cascades < 1 || self.width < 1 {
            return bad("ssl needs ≥ 1 cascade and width ≥ 1");
        }
        if !(0.0 < self.ratio_low && self.ratio_low <= self.ratio_high && self.ratio_high < 1.0) {
            return bad("ssl split ratios must satisfy 0 < low ≤ high < 1");
        }
        if !(0.0..=1.0).contains(&self.loss_alpha) {
            return bad("loss_alpha must lie in [0, 1]");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite() && self.eta_init.is_finite()) {
            return bad("lr must be finite and ≥ 0, eta_init finite");
        }
        Ok(())
    }
}
