//! Upstream learning: multi-task training and the three meta-learning
//! updates, turning base parameters into a transfer-ready checkpoint.

mod algorithms;
mod train;

pub use algorithms::{
    fomaml_direction, fomaml_step, maml_direction, maml_step, reptile_direction, reptile_step, Direction,
    ModelObjective, Objective,
};
pub use train::{
    meta_train, multitask_train, train, Best, LogEntry, Observer, Options, Outcome, TrainState, Validator,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::model::ModelError;
use crate::optim::OptimizerConfig;

#[derive(Debug, Error)]
pub enum UpstreamError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid upstream config: {0}")]
    Config(String),
    #[error("no training tasks")]
    NoTasks,
    #[error("task {task}: {detail}")]
    Task { task: String, detail: String },
    #[error("unknown method {0:?} (expected mtl, maml, fomaml or reptile)")]
    UnknownMethod(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{0}")]
    Observer(String),
}

impl From<AutodiffError> for UpstreamError {
    fn from(e: AutodiffError) -> Self {
        UpstreamError::Model(ModelError::Autodiff(e))
    }
}

impl UpstreamError {
    /// Overflow or other non-finite arithmetic, as opposed to a usage error.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            UpstreamError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mtl,
    Maml,
    Fomaml,
    Reptile,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mtl, Method::Maml, Method::Fomaml, Method::Reptile];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mtl => "mtl",
            Method::Maml => "maml",
            Method::Fomaml => "fomaml",
            Method::Reptile => "reptile",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = UpstreamError;

    fn from_str(s: &str) -> Result<Self, UpstreamError> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UpstreamError::UnknownMethod(s.to_string()))
    }
}

/// Upstream hyperparameters. `inner_lr` and `outer_lr` are the step sizes
/// of the inner (task-adaptation) and outer (meta) updates; multi-task
/// training uses `outer_lr` and `batch_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_steps: usize,
    pub support_batch: usize,
    pub query_batch: usize,
    /// Mini-batch size of multi-task training.
    pub batch_size: usize,
    pub total_steps: usize,
    /// Checkpoint (and, with dev tasks, validation) interval in steps.
    pub validate_every: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 0.05,
            outer_lr: 0.05,
            inner_steps: 1,
            support_batch: 4,
            query_batch: 4,
            batch_size: 8,
            total_steps: 1000,
            validate_every: 100,
            seed: 0,
            optimizer: OptimizerConfig::Sgd,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self, method: Method) -> Result<(), UpstreamError> {
        let bad = |m: &str| Err(UpstreamError::Config(m.to_string()));
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return bad("outer_lr must be positive");
        }
        if method != Method::Mtl && !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return bad("inner_lr must be positive");
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be at least 1");
        }
        if matches!(method, Method::Maml | Method::Fomaml) && self.inner_steps != 1 {
            return bad("maml and fomaml use exactly one inner step");
        }
        if self.support_batch == 0 || self.query_batch == 0 || self.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.validate_every == 0 {
            return bad("validate_every must be positive");
        }
        Ok(())
    }
}
