//! The voting and filtering pipeline run on remote samples, without updates.
//!
//! Every verdict comes from the same core functions the trainer uses, so a
//! record is what consensus plus the filter would give on the same texts.

use std::collections::BTreeMap;

use futures::stream::{self, StreamExt};
use serde::{Serialize, Serializer};
use varsynth_core::consensus::{extract_answer, majority_vote, ExtractionRule};
use varsynth_core::synthesis::{admit_cluster, difficulty_gate, Admission, FilterConfig, Rejection};
use varsynth_core::task::RenderedQuery;

use crate::client::RemoteClient;
use crate::error::{RemoteError, Result};

/// Accuracy histogram bins of width 1/8; the last bin includes 1.0.
pub const ACCURACY_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Admitted,
    Rejected(Rejection),
    /// No rollout yielded an extractable answer.
    NoAnswer,
    /// The rollout request failed.
    Failed(String),
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Admitted => f.write_str("admitted"),
            Verdict::Rejected(r) => write!(f, "{r}"),
            Verdict::NoAnswer => f.write_str("rejected: no answer extracted"),
            Verdict::Failed(e) => write!(f, "failed: {e}"),
        }
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRecord {
    pub query_id: usize,
    pub query: String,
    pub rollouts: usize,
    pub extraction_failures: usize,
    pub tally: BTreeMap<String, usize>,
    pub pseudo_label: Option<String>,
    pub accuracy: Option<f64>,
    pub verdict: Verdict,
    /// Variants kept after the length filter.
    pub variants: Vec<String>,
    pub variant_count: usize,
    pub variants_over_length: usize,
    pub malformed_synthesis: bool,
    pub synthesis_error: Option<String>,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub records: Vec<AuditRecord>,
    pub admitted: usize,
    pub rejected: usize,
    pub failed: usize,
    /// Counts of origin accuracies per bin of width 1/8.
    pub accuracy_histogram: Vec<usize>,
    /// Admitted over admitted plus rejected; failures are excluded.
    pub pass_rate: Option<f64>,
}

impl AuditReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn accuracy_bin(acc: f64) -> usize {
    ((acc * ACCURACY_BINS as f64) as usize).min(ACCURACY_BINS - 1)
}

async fn audit_one(
    client: &RemoteClient,
    query_id: usize,
    query: &str,
    filter: &FilterConfig,
    rule: &ExtractionRule,
    prompt_template: &str,
) -> Result<AuditRecord> {
    let mut record = AuditRecord {
        query_id,
        query: query.to_string(),
        rollouts: 0,
        extraction_failures: 0,
        tally: BTreeMap::new(),
        pseudo_label: None,
        accuracy: None,
        verdict: Verdict::NoAnswer,
        variants: Vec::new(),
        variant_count: 0,
        variants_over_length: 0,
        malformed_synthesis: false,
        synthesis_error: None,
        retries: 0,
    };
    let response = match client.request_rollouts(query).await {
        Ok(r) => r,
        Err(e @ (RemoteError::Transport { .. } | RemoteError::Protocol(_))) => {
            record.verdict = Verdict::Failed(e.to_string());
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    record.retries = response.retries;
    record.rollouts = response.texts.len();
    let answers: Vec<Option<String>> = response.texts.iter().map(|t| extract_answer(t, rule)).collect();
    record.extraction_failures = answers.iter().filter(|a| a.is_none()).count();
    let consensus = majority_vote(&answers)?;
    record.tally = consensus.tally.clone();
    let Some(label) = consensus.pseudo_label.clone() else {
        return Ok(record);
    };
    record.pseudo_label = Some(label.clone());
    record.accuracy = Some(consensus.group_accuracy);
    if let Err(reason) = difficulty_gate(consensus.group_accuracy, filter) {
        record.verdict = Verdict::Rejected(reason);
        return Ok(record);
    }

    let mut texts = Vec::new();
    if filter.k > 0 {
        match client.request_variants(prompt_template, query, &label, filter.k).await {
            Ok(v) => {
                record.retries += v.retries;
                record.malformed_synthesis = v.malformed;
                texts = v.variants;
            }
            Err(e @ (RemoteError::Transport { .. } | RemoteError::Protocol(_))) => {
                record.malformed_synthesis = true;
                record.synthesis_error = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let origin = RenderedQuery::from_text(query_id as u64, None, query, 0);
    let candidates: Vec<RenderedQuery> = texts
        .iter()
        .map(|t| RenderedQuery::from_text(query_id as u64, None, t, 0))
        .collect();
    let offered = candidates.len();
    match admit_cluster(&origin, &consensus, candidates, filter, 0)? {
        Admission::Admitted(cluster) => {
            record.verdict = Verdict::Admitted;
            record.variants_over_length = offered - cluster.variants.len();
            record.variants = cluster.variants.into_iter().map(|v| v.text).collect();
            record.variant_count = record.variants.len();
        }
        Admission::Rejected { reason, .. } => record.verdict = Verdict::Rejected(reason),
    }
    Ok(record)
}

/// Runs rollouts, extraction, voting, the difficulty gate and (when admitted)
/// synthesis with length checks for every query. Records are in dataset order.
/// A failed request is recorded and the run continues.
pub async fn audit_pipeline(
    client: &RemoteClient,
    dataset: &[String],
    filter: &FilterConfig,
    rule: &ExtractionRule,
    prompt_template: &str,
) -> Result<AuditReport> {
    if dataset.is_empty() {
        return Err(RemoteError::Config("audit dataset is empty".into()));
    }
    filter.validate()?;
    let mut rule = rule.clone();
    rule.compile()?;
    let rule = &rule;
    let records: Vec<AuditRecord> = stream::iter(dataset.iter().enumerate())
        .map(|(i, q)| audit_one(client, i, q, filter, rule, prompt_template))
        .buffered(client.endpoint().max_in_flight)
        .collect::<Vec<_>>()
        .await
        .into_iter()
        .collect::<Result<_>>()?;

    let mut histogram = vec![0; ACCURACY_BINS];
    let (mut admitted, mut rejected, mut failed) = (0, 0, 0);
    for r in &records {
        if let Some(acc) = r.accuracy {
            histogram[accuracy_bin(acc)] += 1;
        }
        match r.verdict {
            Verdict::Admitted => admitted += 1,
            Verdict::Rejected(_) | Verdict::NoAnswer => rejected += 1,
            Verdict::Failed(_) => failed += 1,
        }
    }
    let considered = admitted + rejected;
    Ok(AuditReport {
        records,
        admitted,
        rejected,
        failed,
        accuracy_histogram: histogram,
        pass_rate: (considered > 0).then(|| admitted as f64 / considered as f64),
    })
}
