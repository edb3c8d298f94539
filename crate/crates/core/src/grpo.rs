//! Group-relative advantages, the clipped surrogate, and the AdamW update.

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::policy::{accumulate_logprob_grad, LinearSoftmax, PolicyParams, PolicySnapshot, Rollout};
use crate::task::RenderedQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    /// Divide by `G`.
    Population,
    /// Divide by `G - 1`.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerState {
    pub clip_epsilon: f64,
    pub stability_delta: f64,
    /// Peak learning rate used for the linear policy.
    pub peak_lr: f64,
    /// Peak learning rate of the billion-parameter setting this schedule mirrors.
    /// Informational only; `peak_lr` is what the optimizer uses.
    pub reference_peak_lr: f64,
    /// Length of the cosine schedule. `None` lets the trainer derive it from the schedule.
    pub total_steps: Option<usize>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub advantage_std: StdKind,
    /// Optimizer updates per rollout group, all against the same snapshot.
    pub inner_epochs: usize,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            stability_delta: 1e-4,
            peak_lr: 3e-4,
            reference_peak_lr: 5e-7,
            total_steps: None,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            advantage_std: StdKind::Population,
            inner_epochs: 1,
        }
    }
}

impl OptimizerState {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(config("optimizer.clip_epsilon must lie in (0, 1)"));
        }
        if !(self.stability_delta > 0.0) {
            return Err(config("optimizer.stability_delta must be > 0"));
        }
        if !(self.peak_lr > 0.0) {
            return Err(config("optimizer.peak_lr must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config("optimizer.weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config("optimizer.beta1 and optimizer.beta2 must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(config("optimizer.adam_epsilon must be > 0"));
        }
        if self.inner_epochs == 0 {
            return Err(config("optimizer.inner_epochs must be >= 1"));
        }
        if self.total_steps == Some(0) {
            return Err(config("optimizer.total_steps must be >= 1"));
        }
        Ok(())
    }
}

/// `A_i = (r_i − mean) / (std + delta)`. Equal rewards give exact zeros.
pub fn compute_advantages(rewards: &[f64], delta: f64, std_kind: StdKind) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(domain("cannot compute advantages of an empty group"));
    }
    if !(delta > 0.0) {
        return Err(domain("delta must be > 0"));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let ss: f64 = rewards.iter().map(|r| (r - mean).powi(2)).sum();
    let denom = match std_kind {
        StdKind::Population => g,
        StdKind::Sample => (g - 1.0).max(1.0),
    };
    let std = (ss / denom).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + delta)).collect())
}

/// `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::Numeric(format!("probability ratio must be positive, got {ratio}")));
    }
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// `∂L/∂ρ` of the clipped objective. Zero where the clipped branch is active and saturated.
fn clipped_objective_slope(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let inside = ratio >= 1.0 - epsilon && ratio <= 1.0 + epsilon;
    if inside {
        return advantage;
    }
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage < clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// `peak · (1 + cos(π · step / total)) / 2`, clamped to 0 past the end.
pub fn cosine_lr(step: usize, total_steps: usize, peak: f64) -> f64 {
    if step >= total_steps {
        return 0.0;
    }
    let frac = step as f64 / total_steps.max(1) as f64;
    peak * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

/// One scored rollout group ready for an update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub old_logprobs: Vec<f64>,
    pub rollouts: Vec<Rollout>,
}

impl AdvantageBatch {
    /// Scores `rollouts` with `rewards` and records reference logprobs from `snapshot`.
    /// `contexts[i]` is the query rollout `i` was sampled for.
    pub fn new(
        rollouts: Vec<Rollout>,
        rewards: Vec<f64>,
        snapshot: &PolicySnapshot,
        contexts: &[&RenderedQuery],
        opt: &OptimizerState,
        temperature: f64,
    ) -> Result<Self> {
        if rollouts.len() != rewards.len() || rollouts.len() != contexts.len() {
            return Err(domain("rollouts, rewards and contexts must have equal length"));
        }
        let advantages = compute_advantages(&rewards, opt.stability_delta, opt.advantage_std)?;
        let old_logprobs = rollouts
            .iter()
            .zip(contexts)
            .map(|(r, q)| snapshot.logprob(q, r.answer_class, temperature))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rewards,
            advantages,
            old_logprobs,
            rollouts,
        })
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    fn check(&self, contexts: &[&RenderedQuery]) -> Result<()> {
        let g = self.rollouts.len();
        if g == 0 {
            return Err(domain("empty advantage batch"));
        }
        if self.rewards.len() != g
            || self.advantages.len() != g
            || self.old_logprobs.len() != g
            || contexts.len() != g
        {
            return Err(domain("advantage batch fields must have equal length"));
        }
        Ok(())
    }
}

/// `J = (1/G) Σ L_i` at the given parameters.
pub fn surrogate_objective(
    policy: &impl LinearSoftmax,
    batch: &AdvantageBatch,
    contexts: &[&RenderedQuery],
    epsilon: f64,
    temperature: f64,
) -> Result<f64> {
    batch.check(contexts)?;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let lp = policy.logprob(contexts[i], batch.rollouts[i].answer_class, temperature)?;
        let ratio = (lp - batch.old_logprobs[i]).exp();
        total += clipped_objective(ratio, batch.advantages[i], epsilon)?;
    }
    Ok(total / batch.len() as f64)
}

/// `J` and `∂J/∂W`.
pub fn surrogate_gradient(
    policy: &impl LinearSoftmax,
    batch: &AdvantageBatch,
    contexts: &[&RenderedQuery],
    epsilon: f64,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    batch.check(contexts)?;
    let g = batch.len() as f64;
    let mut grad = vec![0.0; policy.feature_dim() * policy.num_classes()];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let class = batch.rollouts[i].answer_class;
        let adv = batch.advantages[i];
        let lp = policy.logprob(contexts[i], class, temperature)?;
        let ratio = (lp - batch.old_logprobs[i]).exp();
        total += clipped_objective(ratio, adv, epsilon)?;
        let slope = clipped_objective_slope(ratio, adv, epsilon);
        if slope != 0.0 {
            accumulate_logprob_grad(policy, contexts[i], class, temperature, slope * ratio / g, &mut grad)?;
        }
    }
    Ok((total / g, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Surrogate value before the update.
    pub objective: f64,
    pub grad_norm: f64,
    pub lr: f64,
    /// False when the gradient was exactly zero and the optimizer was not stepped.
    pub applied: bool,
}

/// One AdamW ascent step on the clipped surrogate at `cosine_lr(step)`.
///
/// An exactly-zero gradient leaves the parameters and the moment estimates
/// untouched. A non-finite gradient is an error and also leaves them untouched.
pub fn grpo_step(
    params: &mut PolicyParams,
    batch: &AdvantageBatch,
    contexts: &[&RenderedQuery],
    opt: &OptimizerState,
    step: usize,
    temperature: f64,
) -> Result<UpdateReport> {
    let lr = cosine_lr(step, opt.total_steps.unwrap_or(1), opt.peak_lr);
    let (objective, grad) = surrogate_gradient(params, batch, contexts, opt.clip_epsilon, temperature)?;
    if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite surrogate gradient".into()));
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm == 0.0 {
        return Ok(UpdateReport {
            objective,
            grad_norm,
            lr,
            applied: false,
        });
    }
    adamw_ascent(params, &grad, lr, opt);
    Ok(UpdateReport {
        objective,
        grad_norm,
        lr,
        applied: true,
    })
}

/// AdamW with bias correction, ascending `grad`.
fn adamw_ascent(params: &mut PolicyParams, grad: &[f64], lr: f64, opt: &OptimizerState) {
    params.update_count += 1;
    let t = params.update_count as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (((w, m), v), &g) in params
        .weights
        .iter_mut()
        .zip(params.first_moment.iter_mut())
        .zip(params.second_moment.iter_mut())
        .zip(grad)
    {
        let descent = -g;
        *m = opt.beta1 * *m + (1.0 - opt.beta1) * descent;
        *v = opt.beta2 * *v + (1.0 - opt.beta2) * descent * descent;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * (m_hat / (v_hat.sqrt() + opt.adam_epsilon) + opt.weight_decay * *w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        let a = compute_advantages(&[1.0, 1.0, 0.0, 0.0], 1e-4, StdKind::Population).unwrap();
        let want = 0.5 / (0.5 + 1e-4);
        for (x, s) in a.iter().zip([1.0, 1.0, -1.0, -1.0]) {
            assert!((x - s * want).abs() < 1e-15);
        }
        assert!((want - 0.999_800_04).abs() < 1e-8);
        assert_eq!(
            compute_advantages(&[1.0; 4], 1e-4, StdKind::Population).unwrap(),
            vec![0.0; 4]
        );
        assert!(compute_advantages(&[], 1e-4, StdKind::Population).is_err());
        let s = compute_advantages(&[1.0, 0.0], 1e-4, StdKind::Sample).unwrap();
        let sd = (0.5f64).sqrt();
        assert!((s[0] - 0.5 / (sd + 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clipped_objective(1.0, 2.0, 0.2).unwrap(), 2.0);
        assert!((clipped_objective(1.5, 1.0, 0.2).unwrap() - 1.2).abs() < 1e-15);
        assert!((clipped_objective(0.5, -1.0, 0.2).unwrap() + 0.8).abs() < 1e-15);
        assert!(clipped_objective(0.0, 1.0, 0.2).is_err());
        assert!(clipped_objective(-1.0, 1.0, 0.2).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 100, 0.05), 0.05);
        assert!(cosine_lr(100, 100, 0.05).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.05) - 0.025).abs() < 1e-15);
        assert_eq!(cosine_lr(150, 100, 0.05), 0.0);
    }

    #[test]
    fn slope_matches_branches() {
        // Outside the band on the side where clipping binds, the slope vanishes.
        assert_eq!(clipped_objective_slope(1.5, 1.0, 0.2), 0.0);
        assert_eq!(clipped_objective_slope(0.5, -1.0, 0.2), 0.0);
        // Outside the band on the pessimistic side, the unclipped term is active.
        assert_eq!(clipped_objective_slope(1.5, -1.0, 0.2), -1.0);
        assert_eq!(clipped_objective_slope(0.5, 1.0, 0.2), 1.0);
        assert_eq!(clipped_objective_slope(1.1, 3.0, 0.2), 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerState::default().validate().is_ok());
        let bad = OptimizerState {
            clip_epsilon: 1.0,
            ..OptimizerState::default()
        };
        assert!(bad.validate().is_err());
    }
}
