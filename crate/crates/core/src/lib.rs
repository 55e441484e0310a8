//! Next-goal Q-learning over hockey play-by-play events and the Goal Impact Metric.

mod codec;
pub mod error;
pub mod event_model;
pub mod ingestion;
pub mod qnet;
pub mod oracle_sim;
pub mod trainer;
pub mod valuation;
pub mod eval_harness;

pub use error::{CheckpointError, Error, Result};
