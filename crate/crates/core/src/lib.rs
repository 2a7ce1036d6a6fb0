//! Multi-object tracking and trajectory conflict detection for fixed
//! intersection cameras.
//!
//! Detections flow through [`tracker::Tracker`] (Kalman prediction plus
//! Hungarian association), the resulting trajectories are cut into windows
//! and tested pairwise for crossings or close approaches in [`nearmiss`], and
//! [`pipeline`] wires the stages together. [`simulator`] produces labelled
//! synthetic scenes and [`evaluation`] scores event localisation per frame.

pub mod assoc;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod kalman;
pub mod nearmiss;
pub mod par;
pub mod pipeline;
pub mod plot;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};
pub use par::Execution;
