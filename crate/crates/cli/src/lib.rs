//! Harness behind the `varsynth` binary.

pub mod audit;
pub mod experiment;
pub mod plots;
pub mod sweep;
