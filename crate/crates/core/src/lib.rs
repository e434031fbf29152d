//! Segment-and-measure now/future prediction for time-lapsed sky videos.

pub mod data;
pub mod error;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
pub mod harness;
