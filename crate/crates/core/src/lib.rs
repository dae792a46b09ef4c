//! Attention-aware intervention toolkit.

pub mod cli;
pub mod cot;
pub mod error;
pub mod harness;
pub mod heads;
pub mod kernel;
pub mod mask;
pub mod model;
pub mod rules;
pub mod trace;
pub mod train;

pub use error::{AaiError, Result};
