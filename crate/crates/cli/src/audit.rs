//! Audit command plumbing: dataset and prompt loading, optional bundled fixture server.

use std::path::Path;

use anyhow::{bail, Context, Result};
use varsynth_core::synthesis::DEFAULT_SYNTHESIS_PROMPT;
use varsynth_core::TrainConfig;
use varsynth_remote::fixture::{FixtureServer, Transcript};
use varsynth_remote::{audit_pipeline, AuditReport, EndpointConfig, RemoteClient};

/// Queries from the config: inline, or a JSON string array, or one per line.
pub fn load_dataset(config: &TrainConfig) -> Result<Vec<String>> {
    let queries = match &config.audit.dataset_path {
        None => config.audit.queries.clone(),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            match serde_json::from_str::<Vec<String>>(&text) {
                Ok(q) => q,
                Err(_) => text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
            }
        }
    };
    if queries.is_empty() {
        bail!("audit dataset is empty (set audit.queries or audit.dataset_path)");
    }
    Ok(queries)
}

pub fn load_prompt(config: &TrainConfig) -> Result<String> {
    match &config.audit.prompt_template_path {
        None => Ok(DEFAULT_SYNTHESIS_PROMPT.to_string()),
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
    }
}

/// Runs the audit, against a local fixture server when `transcript` is given.
pub async fn run_audit(config: &TrainConfig, endpoint: EndpointConfig, transcript: Option<&Path>) -> Result<AuditReport> {
    let dataset = load_dataset(config)?;
    let prompt = load_prompt(config)?;
    let server = match transcript {
        Some(path) => Some(FixtureServer::start(Transcript::load(path)?).await?),
        None => None,
    };
    let endpoint = match &server {
        Some(s) => EndpointConfig {
            base_url: s.base_url(),
            ..endpoint
        },
        None => endpoint,
    };
    let client = RemoteClient::new(endpoint)?;
    let report = audit_pipeline(&client, &dataset, &config.filter, &config.extraction, &prompt).await;
    if let Some(s) = server {
        s.stop().await?;
    }
    Ok(report?)
}
