//! Online learning and control of kernelized nonlinear regulators.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod driver;
pub mod envs;
pub mod error;
pub mod features;
pub mod model;
pub mod numerics;
pub mod planner;
pub mod report;

pub use error::{KnrError, Result};
