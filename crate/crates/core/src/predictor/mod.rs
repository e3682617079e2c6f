//! The convolutional density predictor and the binary baseline.
//!
//! Shared trunk (input `15 x 80 x 3`):
//!
//! ```text
//! BatchNorm -> Conv(7x3)x10, ReLU -> MaxPool 1x3 -> Conv(3x3)x20, ReLU
//!   -> MaxPool 1x3 -> Dropout -> Dense 256, ReLU -> Dropout -> Dense 20, tanh
//!   -> BatchNorm
//! ```
//!
//! The proposed head splits the 20 trunk outputs into a TTE half and a TSE
//! half and applies one shared `Dropout -> Dense 2` block to each. Output 0
//! goes through softplus (scale `alpha`), output 1 through `gamma * sigmoid`
//! (shape `beta`). The baseline head is `Dropout -> Dense 2, tanh -> Dropout
//! -> Dense 1` followed by a sigmoid.

mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::dist::Family;
use crate::error::{invalid, Error, Result};

pub use network::{Network, Prediction, TrainingMeta};
pub use train::{train, train_with_progress, EpochStats, TrainReport, TrainingClip};

pub const TRUNK_OUTPUTS: usize = 20;
pub const HEAD_INPUTS: usize = TRUNK_OUTPUTS / 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Proposed,
    Baseline,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Variant::Proposed),
            "baseline" => Ok(Variant::Baseline),
            _ => Err(invalid(format!("unknown model variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Proposed => "proposed",
            Variant::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub family: Family,
    /// TTE/TSE threshold in frames.
    pub threshold: u32,
    /// Upper bound of the shape parameter.
    pub gamma: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Frames drawn (without replacement) per epoch; `None` uses every frame.
    pub samples_per_epoch: Option<usize>,
    /// Fraction of training clips held out for best-epoch selection.
    pub val_fraction: f64,
    /// Cap on validation frames scored per epoch; `None` scores all of them.
    pub val_frames: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Proposed,
            family: Family::LogLogistic,
            threshold: 10,
            gamma: 5.0,
            epochs: 300,
            lr: 0.001,
            batch_size: 256,
            dropout: 0.5,
            seed: 0,
            samples_per_epoch: None,
            val_fraction: 0.1,
            val_frames: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.threshold == 0 {
            return Err(invalid("threshold must be at least 1 frame"));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch size must be at least 2 (batchnorm)"));
        }
        if !(self.gamma > 0.0) {
            return Err(invalid("gamma must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid("validation fraction must lie in [0, 1)"));
        }
        if self.samples_per_epoch == Some(0) || self.val_frames == Some(0) {
            return Err(invalid("sample caps must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON-serialized configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
