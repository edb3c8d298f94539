//! Answer extraction, majority voting and the label-free reward.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionKind {
    Verbatim,
    BoxedPattern,
    Regex,
}

/// How a final answer is pulled out of a response.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionRule {
    pub kind: ExtractionKind,
    pub pattern: String,
    #[serde(skip)]
    compiled: Option<Regex>,
}

impl PartialEq for ExtractionRule {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.pattern == other.pattern
    }
}

impl Default for ExtractionRule {
    fn default() -> Self {
        Self::boxed()
    }
}

impl ExtractionRule {
    pub fn verbatim() -> Self {
        Self {
            kind: ExtractionKind::Verbatim,
            pattern: String::new(),
            compiled: None,
        }
    }

    pub fn boxed() -> Self {
        Self {
            kind: ExtractionKind::BoxedPattern,
            pattern: String::new(),
            compiled: None,
        }
    }

    pub fn regex(pattern: &str) -> Result<Self> {
        let mut rule = Self {
            kind: ExtractionKind::Regex,
            pattern: pattern.to_string(),
            compiled: None,
        };
        rule.compile()?;
        Ok(rule)
    }

    /// Compiles the regex of a deserialized rule. No-op for the other kinds.
    pub fn compile(&mut self) -> Result<()> {
        if self.kind == ExtractionKind::Regex && self.compiled.is_none() {
            let re = Regex::new(&self.pattern)
                .map_err(|e| config(format!("extraction.pattern does not compile: {e}")))?;
            if re.captures_len() < 2 {
                return Err(config("extraction.pattern needs a capture group"));
            }
            self.compiled = Some(re);
        }
        Ok(())
    }
}

/// Returns the final answer in `text`, or `None` when the rule finds nothing.
pub fn extract_answer(text: &str, rule: &ExtractionRule) -> Option<String> {
    let raw = match rule.kind {
        ExtractionKind::Verbatim => Some(text.to_string()),
        ExtractionKind::BoxedPattern => last_boxed(text),
        ExtractionKind::Regex => {
            let owned;
            let re = match &rule.compiled {
                Some(re) => re,
                None => {
                    owned = Regex::new(&rule.pattern).ok()?;
                    &owned
                }
            };
            re.captures_iter(text)
                .last()
                .and_then(|c| c.get(1))
                .map(|m| m.as_str().to_string())
        }
    };
    raw.map(|s| canonicalize(&s)).filter(|s| !s.is_empty())
}

/// Trims and collapses runs of whitespace.
pub fn canonicalize(answer: &str) -> String {
    answer.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Contents of the last `\boxed{...}`, honoring nested braces.
fn last_boxed(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let mut found = None;
    let mut search = 0;
    while let Some(rel) = text[search..].find(MARKER) {
        let open = search + rel + MARKER.len();
        let mut depth = 1usize;
        let mut close = None;
        for (i, ch) in text[open..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(open + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match close {
            Some(c) => {
                found = Some(text[open..c].to_string());
                search = c + 1;
            }
            None => break,
        }
    }
    found
}

/// Outcome of a majority vote over one group of responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub pseudo_label: Option<String>,
    pub tally: BTreeMap<String, usize>,
    pub group_accuracy: f64,
    pub n_total: usize,
    pub n_extracted: usize,
}

impl ConsensusResult {
    pub fn label(&self) -> Result<&str> {
        self.pseudo_label
            .as_deref()
            .ok_or_else(|| domain("consensus has no pseudo-label"))
    }
}

/// Plurality vote. Missing answers count in `n_total` but never vote.
/// Ties go to the byte-wise smallest answer.
pub fn majority_vote<S: AsRef<str>>(answers: &[Option<S>]) -> Result<ConsensusResult> {
    if answers.is_empty() {
        return Err(domain("cannot vote over an empty answer list"));
    }
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for a in answers.iter().flatten() {
        *tally.entry(a.as_ref().to_string()).or_insert(0) += 1;
    }
    let n_extracted = tally.values().sum();
    // BTreeMap iterates in byte order, and only a strictly larger count replaces the leader.
    let mut best: Option<(&String, usize)> = None;
    for (answer, &count) in &tally {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((answer, count));
        }
    }
    let (pseudo_label, group_accuracy) = match best {
        Some((a, c)) => (Some(a.clone()), c as f64 / answers.len() as f64),
        None => (None, 0.0),
    };
    Ok(ConsensusResult {
        pseudo_label,
        tally,
        group_accuracy,
        n_total: answers.len(),
        n_extracted,
    })
}

/// `r_i = 1` iff answer `i` was extracted and equals the pseudo-label.
pub fn reward_vector<S: AsRef<str>>(answers: &[Option<S>], pseudo_label: Option<&str>) -> Result<Vec<f64>> {
    let label = pseudo_label.ok_or_else(|| domain("reward needs a pseudo-label"))?;
    Ok(answers
        .iter()
        .map(|a| match a {
            Some(a) if a.as_ref() == label => 1.0,
            _ => 0.0,
        })
        .collect())
}

/// Fraction of all responses, failures included, that match the pseudo-label.
pub fn group_accuracy(result: &ConsensusResult) -> Result<f64> {
    let label = result.label()?;
    let hits = result.tally.get(label).copied().unwrap_or(0);
    Ok(hits as f64 / result.n_total as f64)
}
