//! Variant synthesis and the two-step online filter.
//!
//! A query whose current group accuracy sits inside `[tau_low, tau_high]` is
//! expanded into a cluster: the original plus up to `k` answer-preserving
//! rewrites. Rewrites longer than `l_max` tokens are dropped one by one.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusResult;
use crate::error::{config, domain, Error, Result};
use crate::rng::rng_for;
use crate::task::{render, FamilyConfig, ProblemInstance, RenderedQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub tau_low: f64,
    pub tau_high: f64,
    pub l_max: usize,
    pub k: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau_low: 0.125,
            tau_high: 0.875,
            l_max: 1024,
            k: 3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("filter.tau_low", self.tau_low), ("filter.tau_high", self.tau_high)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.tau_low > self.tau_high {
            return Err(config("tau_low > tau_high"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    AboveHigh,
    BelowLow,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::AboveHigh => f.write_str("rejected: acc above τ_high"),
            Rejection::BelowLow => f.write_str("rejected: acc below τ_low"),
        }
    }
}

/// Inclusive difficulty gate on the original query's group accuracy.
pub fn difficulty_gate(accuracy: f64, filter: &FilterConfig) -> Result<(), Rejection> {
    if accuracy > filter.tau_high {
        Err(Rejection::AboveHigh)
    } else if accuracy < filter.tau_low {
        Err(Rejection::BelowLow)
    } else {
        Ok(())
    }
}

/// An original query and the rewrites admitted alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryCluster {
    pub original: RenderedQuery,
    pub variants: Vec<RenderedQuery>,
    pub pseudo_label: String,
    pub origin_accuracy: f64,
    pub admitted: bool,
    pub created_at_step: usize,
}

impl QueryCluster {
    /// Original first, then the variants in order.
    pub fn members(&self) -> impl Iterator<Item = &RenderedQuery> {
        std::iter::once(&self.original).chain(&self.variants)
    }

    pub fn member_count(&self) -> usize {
        1 + self.variants.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Admitted(QueryCluster),
    Rejected { reason: Rejection, accuracy: f64 },
}

/// Applies both filter steps: difficulty on the origin, then length on each variant.
pub fn admit_cluster(
    origin: &RenderedQuery,
    origin_consensus: &ConsensusResult,
    variants: Vec<RenderedQuery>,
    filter: &FilterConfig,
    step: usize,
) -> Result<Admission> {
    let label = origin_consensus.label()?.to_string();
    let accuracy = crate::consensus::group_accuracy(origin_consensus)?;
    if let Err(reason) = difficulty_gate(accuracy, filter) {
        return Ok(Admission::Rejected { reason, accuracy });
    }
    let variants = variants
        .into_iter()
        .filter(|v| v.token_length <= filter.l_max)
        .collect();
    Ok(Admission::Admitted(QueryCluster {
        original: origin.clone(),
        variants,
        pseudo_label: label,
        origin_accuracy: accuracy,
        admitted: true,
        created_at_step: step,
    }))
}

/// A blocking text-completion backend for remote synthesis.
pub trait CompletionSource {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Where rewrites come from.
pub enum VariantSource<'a> {
    /// Re-render the same instance under other templates of the table.
    Synthetic {
        instance: &'a ProblemInstance,
        family: &'a FamilyConfig,
        /// Templates eligible as variants. The query's own template is excluded automatically.
        pool: &'a [usize],
        rng_seed: u64,
    },
    /// Ask a model to paraphrase, then parse its numbered list.
    Remote {
        backend: &'a dyn CompletionSource,
        prompt_template: &'a str,
        feature_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub variants: Vec<RenderedQuery>,
    /// Set when a remote response held fewer than `k` well-formed items.
    pub malformed: bool,
}

pub fn synthesize_variants(
    source: &VariantSource<'_>,
    query: &RenderedQuery,
    pseudo_label: &str,
    k: usize,
) -> Result<Synthesis> {
    if k == 0 {
        return Err(domain("variant count k must be >= 1"));
    }
    match source {
        VariantSource::Synthetic {
            instance,
            family,
            pool,
            rng_seed,
        } => {
            if instance.id != query.instance_id {
                return Err(domain("query does not render the given instance"));
            }
            let mut candidates: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&t| Some(t) != query.template_id && t < family.template_count)
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            if k > candidates.len() {
                return Err(domain(format!(
                    "cannot draw {k} distinct variant templates from {} candidates",
                    candidates.len()
                )));
            }
            let mut rng = rng_for(*rng_seed, &[instance.id]);
            candidates.shuffle(&mut rng);
            let variants = candidates[..k]
                .iter()
                .map(|&t| render(instance, t, family))
                .collect::<Result<Vec<_>>>()?;
            Ok(Synthesis {
                variants,
                malformed: false,
            })
        }
        VariantSource::Remote {
            backend,
            prompt_template,
            feature_dim,
        } => {
            let prompt = render_synthesis_prompt(prompt_template, &query.text, pseudo_label, k)?;
            let completion = backend.complete(&prompt)?;
            let parsed = parse_variant_list(&completion, k);
            if parsed.items.is_empty() {
                return Err(Error::SynthesisFailed(
                    "no variants could be parsed from the completion".into(),
                ));
            }
            let variants = parsed
                .items
                .iter()
                .map(|text| RenderedQuery::from_text(query.instance_id, None, text, *feature_dim))
                .collect();
            Ok(Synthesis {
                variants,
                malformed: parsed.malformed,
            })
        }
    }
}

/// Default rewrite prompt. Placeholders: `{query}`, `{answer}`, and optionally `{k}`.
pub const DEFAULT_SYNTHESIS_PROMPT: &str = "\
You rewrite math problems. Produce {k} new versions of the problem below.

Problem:
{query}

Its answer is {answer}. Every rewrite must have exactly this answer.

Rules:
1. Preserve Semantic Equivalence: each rewrite asks for the same quantity under the same conditions.
2. Maintain Mathematical Precision: keep every number, relation and constraint unchanged, and keep the problem solvable.
3. Vary Syntactic Structure and Lexical Expressions: change the sentence structure and wording from one rewrite to the next instead of copying the original.

Output only a numbered list with one rewrite per item, formatted as
1. <rewrite>
2. <rewrite>
and nothing else.
";

pub fn render_synthesis_prompt(
    template: &str,
    query: &str,
    answer: &str,
    k: usize,
) -> Result<String> {
    for placeholder in ["{query}", "{answer}"] {
        if !template.contains(placeholder) {
            return Err(config(format!(
                "synthesis prompt template lacks the {placeholder} placeholder"
            )));
        }
    }
    Ok(template
        .replace("{k}", &k.to_string())
        .replace("{query}", query)
        .replace("{answer}", answer))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVariants {
    pub items: Vec<String>,
    pub malformed: bool,
}

/// Parses list items marked `1.`, `1)` or `-`. Continuation lines join the
/// preceding item. At most `k` items are kept; fewer than `k`, or an empty item,
/// sets `malformed`.
pub fn parse_variant_list(text: &str, k: usize) -> ParsedVariants {
    let mut items: Vec<String> = Vec::new();
    let mut empty_item = false;
    let mut in_item = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            in_item = false;
            continue;
        }
        if let Some(body) = strip_marker(trimmed) {
            let body = body.trim();
            if body.is_empty() {
                empty_item = true;
                in_item = false;
            } else {
                items.push(body.to_string());
                in_item = true;
            }
        } else if in_item {
            let last = items.last_mut().expect("in_item implies an item");
            last.push(' ');
            last.push_str(trimmed);
        }
    }
    let malformed = empty_item || items.len() < k;
    items.truncate(k);
    ParsedVariants { items, malformed }
}

fn strip_marker(line: &str) -> Option<&str> {
    if let Some(rest) = line.strip_prefix("- ") {
        return Some(rest);
    }
    if line == "-" {
        return Some("");
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        Some(rest)
    } else {
        None
    }
}
