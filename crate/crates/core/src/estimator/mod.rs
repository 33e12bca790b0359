//! Patch → log-population regression.
//!
//! The reference model keeps the classic transfer-learning skeleton in a
//! small, trainable-from-scratch form:
//!
//! ```text
//! 4-band input ─ 1×1 conv (4→3) ─ [3×3 conv ─ ReLU ─ 2×2 avg-pool]×k
//!              ─ global average pool ─ dropout ─ linear → p̂
//! ```
//!
//! Training minimizes the batch-summed log-cosh loss with Adam. All
//! gradients are exact reverse-mode derivatives; `tests/gradcheck.rs`
//! verifies them against central differences.

mod adam;
mod baseline;
mod checkpoint;
mod loss;
mod network;
mod params;
mod train;

pub use adam::adam_step;
pub use baseline::{baseline_bandstat, baseline_mean, BandstatFit};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use loss::{log_cosh, log_cosh_loss, loss_gradient, LogBase, LogCosh};
pub use network::{ForwardMode, ForwardPass, Network};
pub use params::{ParamSet, ParamSlot};
pub use train::{predict, predict_table, train, StepLoss, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::patch::PatchError;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backward called without a matching training forward pass")]
    Protocol,
    #[error("non-finite gradient at parameter {index}; update refused")]
    PoisonedUpdate { index: usize },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("dataset has no {0} samples")]
    EmptySplit(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Channels out of the 1×1 fusion layer.
pub const FUSED_CHANNELS: usize = 3;

/// Architecture of the reference convnet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Side of the square input tensor, in pixels.
    pub input_size: usize,
    /// Output channels of each 3×3 conv block; every block halves the side.
    pub conv_channels: Vec<usize>,
    /// Dropout rate applied to the pooled features while training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            conv_channels: vec![8, 16],
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(EstimatorError::Config("input size must be positive".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(EstimatorError::Config(
                "need at least one conv block with positive width".into(),
            ));
        }
        if self.input_size >> self.conv_channels.len() == 0 {
            return Err(EstimatorError::Config(format!(
                "input size {} too small for {} pooling stages",
                self.input_size,
                self.conv_channels.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EstimatorError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of the pooled feature vector feeding the head.
    pub fn feature_width(&self) -> usize {
        *self.conv_channels.last().expect("validated non-empty")
    }
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub dropout_enabled: bool,
    pub loss_base: LogBase,
    /// Validation loss is measured every this many steps.
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_steps: 5_000,
            seed: 0,
            dropout_enabled: true,
            loss_base: LogBase::Ten,
            eval_every: 100,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(EstimatorError::Config("betas must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EstimatorError::Config("learning rate must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(EstimatorError::Config("epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(EstimatorError::Config(
                "batch size and evaluation interval must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
