//! Initial policy construction.
//!
//! Majority-vote rewards only sharpen what the policy already believes, so a
//! policy starting at chance can never beat chance. `Pretrained` stands in for
//! a base model: a short supervised warm start on a separately seeded labeled
//! problem set, deliberately stopped early so the result is competent but
//! under-confident.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::policy::{LinearSoftmax, PolicyParams};
use crate::rng::{rng_for, Purpose};
use crate::task::{generate_problem_set, render, FamilyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Zero,
    Gaussian,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub kind: InitKind,
    /// Standard deviation of the Gaussian init.
    pub std: f64,
    /// Labeled problems for the warm start, drawn with `seeds.init`.
    pub pretrain_instances: usize,
    /// Full-batch gradient steps on the labeled log-likelihood.
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    /// Mass moved from the true answer to the uniform distribution in the
    /// warm-start targets. High values give a policy whose most likely answer
    /// is usually right while single samples often are not.
    pub label_smoothing: f64,
    /// Templates the warm start sees. Empty means all templates.
    pub pretrain_templates: Vec<usize>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            kind: InitKind::Pretrained,
            std: 0.01,
            pretrain_instances: 200,
            pretrain_steps: 300,
            pretrain_lr: 0.5,
            label_smoothing: 0.7,
            pretrain_templates: Vec::new(),
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.std >= 0.0) {
            return Err(config("init.std must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(config("init.label_smoothing must lie in [0, 1)"));
        }
        if !(self.pretrain_lr >= 0.0) {
            return Err(config("init.pretrain_lr must be >= 0"));
        }
        Ok(())
    }
}

/// Builds the starting policy. Moment estimates are zero and `update_count` is 0.
pub fn initial_policy(family: &FamilyConfig, init: &InitConfig, seed: u64) -> Result<PolicyParams> {
    family.validate()?;
    let (f_dim, v) = (family.feature_dim, family.num_classes());
    let mut params = PolicyParams::zeros(f_dim, v);
    match init.kind {
        InitKind::Zero => {}
        InitKind::Gaussian => {
            let normal = Normal::new(0.0, init.std).map_err(|e| config(format!("init.std: {e}")))?;
            let mut rng = rng_for(seed, &[Purpose::Init as u64]);
            for w in &mut params.weights {
                *w = normal.sample(&mut rng);
            }
        }
        InitKind::Pretrained => pretrain(&mut params, family, init, seed)?,
    }
    Ok(params)
}

fn pretrain(params: &mut PolicyParams, family: &FamilyConfig, init: &InitConfig, seed: u64) -> Result<()> {
    let v = params.num_classes;
    let labeled_family = FamilyConfig {
        instance_count: init.pretrain_instances,
        rng_seed: seed,
        ..family.clone()
    };
    let problems = generate_problem_set(&labeled_family)?;
    let templates: Vec<usize> = if init.pretrain_templates.is_empty() {
        (0..family.template_count).collect()
    } else {
        init.pretrain_templates.clone()
    };
    let mut examples = Vec::with_capacity(problems.len() * templates.len());
    for p in &problems {
        for &t in &templates {
            examples.push((render(p, t, family)?, p.ground_truth as usize));
        }
    }
    if examples.is_empty() {
        return Ok(());
    }
    // Plain gradient ascent on the mean cross-entropy against the smoothed
    // targets at temperature 1.
    let scale = 1.0 / examples.len() as f64;
    let floor = init.label_smoothing / v as f64;
    let mut grad = vec![0.0; params.weights.len()];
    for _ in 0..init.pretrain_steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (q, y) in &examples {
            let probs = params.probabilities(q, 1.0)?;
            let coeff: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    let target = floor + if c == *y { 1.0 - init.label_smoothing } else { 0.0 };
                    scale * (target - p)
                })
                .collect();
            for (f, &x) in q.features.iter().enumerate().filter(|(_, x)| **x != 0.0) {
                for (g, c) in grad[f * v..(f + 1) * v].iter_mut().zip(&coeff) {
                    *g += x * c;
                }
            }
        }
        for (w, g) in params.weights.iter_mut().zip(&grad) {
            *w += init.pretrain_lr * g;
        }
    }
    debug_assert!(params.weights().iter().all(|w| w.is_finite()));
    Ok(())
}
