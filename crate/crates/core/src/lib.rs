//! Locally differentially private gradient tracking for distributed online
//! learning over directed graphs.
//!
//! The crate simulates `m` learners that each receive one data point per
//! round, exchange Laplace-perturbed messages over a directed graph and run
//! either the noise-robust tracker or a conventional push-pull baseline. It
//! also computes the sensitivity and cumulative privacy budget bounds and the
//! reference solutions used to score runs.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod graph;
pub mod learners;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod privacy;
pub mod problem;
pub mod rng;

pub use config::{prepare, run_experiment, Experiment, Prepared, RunConfig};
pub use error::{Error, Result};
pub use graph::{build_random_strongly_connected, build_ring, left_perron, validate_weights, DirectedWeights};
pub use learners::{AgentState, Algorithm, RoundTrace};
pub use noise::{LearnerNoise, NoisePlan, NoiseSchedule, StepsizeSchedule};
pub use problem::StreamProblem;
