//! Pipeline orchestration for the `delaycast` binary: configuration
//! merging, stage implementations, and the artifact file formats stages use
//! to hand work to each other.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod stages;
