//! Volume-guided progressive depth completion of indoor scenes with a learned
//! next-best-view planner.
// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod inpaint;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod planner;
pub mod projection;
pub mod scenegen;
pub mod volume;

pub use error::{Error, Result};
pub use par::Exec;
