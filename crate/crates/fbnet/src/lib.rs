//! Feature-boosted pose estimation on joint dependency graphs.
//!
//! The crate layers up from a small autodiff core: dense tensors and a
//! Wengert tape, skeleton graphs with directional schedules, graph-structured
//! recurrent cells with an optional consistency gate, the feature-boosting
//! module that runs them over split channel groups, the two-branch pose
//! network, synthetic dataset tooling, and the training/evaluation harness
//! behind the CLI.

pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod lstd;
pub mod metrics;
pub mod net;
pub mod params;
pub mod serialize;
pub mod tape;
pub mod tensor;
