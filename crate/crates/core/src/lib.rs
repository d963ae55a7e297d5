//! Self-sustaining metronomes coupled through a rolling platform.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod phase;
pub mod serve;
pub mod sim;

pub use error::{Error, Result};
