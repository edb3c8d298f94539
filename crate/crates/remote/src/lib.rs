//! Audit mode against a real model behind an OpenAI-compatible
//! chat-completions endpoint: voting, filtering and variant synthesis on
//! remote samples, with no parameter updates.

pub mod audit;
pub mod client;
pub mod endpoint;
pub mod error;
pub mod fixture;

pub use audit::{audit_pipeline, AuditRecord, AuditReport, Verdict};
pub use client::{RemoteClient, RolloutResponse, VariantResponse};
pub use endpoint::{load_endpoint, EndpointConfig};
pub use error::{RemoteError, Result};
