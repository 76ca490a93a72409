//! Behavior-regularized actor-critic (ReBRAC) for offline reinforcement learning.
//!
//! This crate is the allocation-only algorithmic core: a small dense network
//! engine, the agent, two point-mass environments, in-memory offline datasets
//! and the evaluation statistics used to compare runs. File formats, the CLI
//! and experiment orchestration live in the `rebrac` companion crate.
//!
//! Everything is deterministic given its seeds; no global state is used.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agent;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod evalstats;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use crate::agent::{AgentConfig, AgentState, Batch, StepMetrics};
pub use crate::dataset::{BehaviorPolicy, DatasetMeta, OfflineDataset};
pub use crate::envs::{AnyEnv, Env, EnvKind, MazeEnv, ReachEnv, RefScores};
pub use crate::error::{Error, Result};
pub use crate::nn::{MlpConfig, MlpParams, OutputActivation};
pub use crate::optim::Adam;
pub use crate::scalar::Real;
pub use crate::tensor::Tensor;
