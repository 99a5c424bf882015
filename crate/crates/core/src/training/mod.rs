//! Losses, metrics, the Adam optimizer, the one-cycle schedule and the
//! training loop.

mod adam;
mod metrics;
mod schedule;
mod trainer;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use metrics::{mse_loss, mse_loss_vars, nrmse, rel_l2_loss, rel_l2_loss_vars, relative_l2, rmse};
pub use schedule::{onecycle_lr, OneCycle};
pub use trainer::{
    evaluate, fit_normalizers, EpochRecord, EvalReport, OperatorSample, TrainConfig, TrainHistory, TrainOutcome, Trainer,
};

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target has zero norm")]
    ZeroTarget,
    #[error("out of range: {0}")]
    Range(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl TrainError {
    /// True when the error stems from a NaN or infinity.
    pub fn is_numeric_fault(&self) -> bool {
        matches!(self, TrainError::Tensor(TensorError::NumericFault { .. }))
            || matches!(self, TrainError::Model(ModelError::Tensor(TensorError::NumericFault { .. })))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    RelL2,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "rel_l2" | "rel-l2" => Ok(LossKind::RelL2),
            _ => Err(format!("unknown loss {s:?} (mse | rel_l2)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::RelL2 => "rel_l2",
        })
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
