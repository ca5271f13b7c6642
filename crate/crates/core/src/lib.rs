//! Joint activity and data detection for grant-free uplink in cell-free
//! systems.
//!
//! The crate provides scenario generation, the box-constrained
//! forward-backward-splitting baseline solvers, an unfolded detector network
//! with momentum and an approximate posterior-mean data estimator, a
//! soft-output activity detector, gradient-free training of the network
//! scalars, and a Monte-Carlo evaluation harness with CSV export.

pub mod aud;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod fbs;
pub mod linalg;
pub mod scenario;
pub mod trainer;
pub mod unfolded;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use aud::{AudParams, DetectionReport};
pub use config::Config;
pub use error::{CoreError, Result};
pub use fbs::{FbsOptions, ObjectiveParams, SolverState, StepRule};
pub use harness::{ExperimentConfig, Method, ResultRow, SummaryRow, Timing};
pub use io::Checkpoint;
pub use linalg::{CMat, CVec};
pub use scenario::{
    generate_geometry, generate_instance, generate_instance_with_pilots, generate_pilots,
    large_scale_gain, substream, Geometry, Instance, RngStream, ScenarioConfig,
};
pub use trainer::{Dataset, TrainConfig, TrainTrace};
pub use unfolded::{LayerParams, UnfoldedParams};
