//! Losses, batch sampling and the two training loops, plus reconstruction
//! and threshold selection for the occupancy network.

mod loss;
mod sampler;
mod trainer;

pub use loss::{attribute_loss, focal_loss, l1_penalty, total_loss, P_MIN};
pub use sampler::GeometrySampler;
pub use trainer::{
    assign_color_targets, default_tau_grid, infer_colors, reconstruct_geometry, score_candidates,
    search_threshold, train_attribute, train_attribute_observed, train_geometry, ScoredCandidates,
    ThresholdResult, TraceRow, Trained, INFERENCE_CHUNK,
};

use thiserror::Error;

use crate::metrics::MetricsError;
use crate::nn::NnError;

/// Hyper-parameters shared by both training loops.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps_geometry: u64,
    pub steps_attribute: u64,
    /// Expected share of occupied voxels in a geometry batch.
    pub beta: f64,
    pub lambda_f: f64,
    pub lambda_g: f64,
    pub seed: u64,
    /// Loss trace granularity, in steps.
    pub log_every: u64,
}

impl TrainConfig {
    pub fn new(
        batch_size: usize,
        steps_geometry: u64,
        steps_attribute: u64,
        beta: f64,
        lambda_f: f64,
        lambda_g: f64,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let cfg = Self { batch_size, steps_geometry, steps_attribute, beta, lambda_f, lambda_g, seed, log_every: 100 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch size must be at least 2".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(TrainError::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.lambda_f >= 0.0 && self.lambda_g >= 0.0) {
            return Err(TrainError::Config("sparsity strengths must be non-negative".into()));
        }
        if self.log_every == 0 {
            return Err(TrainError::Config("log interval must be positive".into()));
        }
        Ok(())
    }

    /// Focal-loss class weight; always `1 - beta`.
    pub fn alpha(&self) -> f64 {
        1.0 - self.beta
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("the point cloud is empty")]
    EmptyCloud,
    #[error("the partition has no non-empty cubes")]
    EmptyPartition,
    #[error("the original cloud has no colors")]
    MissingColors,
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: u64, loss: f64 },
    #[error("threshold {0} is outside (0, 1)")]
    InvalidTau(f64),
    #[error("no candidate threshold was supplied")]
    NoThresholds,
    #[error("every candidate threshold produced an empty reconstruction")]
    NoReconstruction,
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
