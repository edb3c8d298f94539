//! Test-time reinforcement learning on unlabeled queries.
//!
//! The policy votes on its own samples to produce pseudo-labels, expands
//! mid-difficulty queries into clusters of answer-preserving rewrites, and
//! trains with GRPO in two modes: an independent update per cluster member
//! (intra-group) and a single update over a mixed pool scored by one joint
//! vote (cross-group).
//!
//! The trainable path runs on a synthetic modular-arithmetic family
//! ([`task`]) with a linear-softmax policy ([`policy`]) whose gradients are
//! exact.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod config;
pub mod consensus;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod init;
pub mod policy;
pub mod rng;
pub mod scheduler;
pub mod synthesis;
pub mod task;
pub mod telemetry;

pub use config::{load_config, parse_config, TrainConfig};
pub use error::{Error, Result};
pub use policy::{LinearSoftmax, PolicyParams, PolicySnapshot, Rollout};
pub use scheduler::{run_training, TrainingLog};
