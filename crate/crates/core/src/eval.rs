//! pass@1 against the hidden oracle.
//!
//! pass@1 is the mean per-sample correctness of `samples_per_problem`
//! temperature/top-p samples, averaged per template and overall. Only this
//! module and the telemetry correctness field read `ground_truth`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::policy::{sample_index, LinearSoftmax};
use crate::rng::{rng_for, Purpose};
use crate::task::{oracle_answer, render, FamilyConfig, ProblemInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_problem: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Templates never used for training variants.
    pub heldout_templates: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_problem: 16,
            temperature: 0.6,
            top_p: 0.95,
            heldout_templates: vec![4, 5],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, template_count: usize) -> Result<()> {
        if self.samples_per_problem == 0 {
            return Err(config("eval.samples_per_problem must be >= 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(config("eval.temperature must be > 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(config("eval.top_p must lie in (0, 1]"));
        }
        if let Some(t) = self.heldout_templates.iter().find(|&&t| t >= template_count) {
            return Err(config(format!(
                "eval.heldout_templates contains {t}, outside [0, template_count)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pass1Report {
    pub per_template: BTreeMap<usize, f64>,
    pub overall: f64,
    pub heldout: Option<f64>,
    pub training: Option<f64>,
}

impl Pass1Report {
    fn mean_over(&self, pick: impl Fn(usize) -> bool) -> Option<f64> {
        let xs: Vec<f64> = self
            .per_template
            .iter()
            .filter(|(t, _)| pick(**t))
            .map(|(_, v)| *v)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Smallest set of most-likely classes whose mass reaches `top_p`, renormalized.
pub fn top_p_filter(probs: &[f64], top_p: f64) -> Vec<f64> {
    if top_p >= 1.0 {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        kept[i] = probs[i];
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    kept.iter_mut().for_each(|p| *p /= mass);
    kept
}

pub fn evaluate_pass1(
    policy: &impl LinearSoftmax,
    problems: &[ProblemInstance],
    family: &FamilyConfig,
    eval: &EvalConfig,
    rng_seed: u64,
) -> Result<Pass1Report> {
    if problems.is_empty() {
        return Err(domain("cannot evaluate an empty problem set"));
    }
    eval.validate(family.template_count)?;
    let mut per_template = BTreeMap::new();
    for t in 0..family.template_count {
        let mut hits = 0usize;
        for p in problems {
            let q = render(p, t, family)?;
            let probs = top_p_filter(&policy.probabilities(&q, eval.temperature)?, eval.top_p);
            let truth = oracle_answer(p) as usize;
            let mut rng = rng_for(rng_seed, &[Purpose::Eval as u64, p.id, t as u64]);
            hits += (0..eval.samples_per_problem)
                .filter(|_| sample_index(&probs, &mut rng) == truth)
                .count();
        }
        let total = problems.len() * eval.samples_per_problem;
        per_template.insert(t, hits as f64 / total as f64);
    }
    let overall = per_template.values().sum::<f64>() / per_template.len() as f64;
    let mut report = Pass1Report {
        per_template,
        overall,
        heldout: None,
        training: None,
    };
    report.heldout = report.mean_over(|t| eval.heldout_templates.contains(&t));
    report.training = report.mean_over(|t| !eval.heldout_templates.contains(&t));
    Ok(report)
}
