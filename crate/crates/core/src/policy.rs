//! Linear-softmax policy over the answer vocabulary.
//!
//! `p(a | x) = softmax(Wᵀx / temperature)[a]` where `x` is the hashed feature
//! vector of a query and `W` is `F × V`, stored row-major (feature-major).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::rng_for;
use crate::task::RenderedQuery;

/// Read access to an `F × V` weight matrix.
pub trait LinearSoftmax {
    fn weights(&self) -> &[f64];
    fn feature_dim(&self) -> usize;
    fn num_classes(&self) -> usize;

    /// Temperature-scaled logits for one query.
    fn logits(&self, query: &RenderedQuery, temperature: f64) -> Result<Vec<f64>> {
        let (f_dim, v) = (self.feature_dim(), self.num_classes());
        if query.features.len() != f_dim {
            return Err(domain(format!(
                "feature vector has length {}, policy expects {f_dim}",
                query.features.len()
            )));
        }
        if !(temperature > 0.0) {
            return Err(domain("temperature must be positive"));
        }
        let w = self.weights();
        let mut out = vec![0.0; v];
        for (f, &x) in query.features.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &w[f * v..(f + 1) * v];
            for (o, &wj) in out.iter_mut().zip(row) {
                *o += x * wj;
            }
        }
        for o in &mut out {
            *o /= temperature;
        }
        if out.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(out)
    }

    fn log_softmax(&self, query: &RenderedQuery, temperature: f64) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(query, temperature)?))
    }

    fn probabilities(&self, query: &RenderedQuery, temperature: f64) -> Result<Vec<f64>> {
        Ok(self
            .log_softmax(query, temperature)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    fn logprob(&self, query: &RenderedQuery, class: usize, temperature: f64) -> Result<f64> {
        check_class(class, self.num_classes())?;
        Ok(self.log_softmax(query, temperature)?[class])
    }

    /// Shannon entropy of the answer distribution, in nats.
    fn entropy(&self, query: &RenderedQuery, temperature: f64) -> Result<f64> {
        let lp = self.log_softmax(query, temperature)?;
        Ok(entropy_from_logprobs(&lp))
    }
}

fn check_class(class: usize, v: usize) -> Result<()> {
    if class >= v {
        return Err(domain(format!("answer class {class} out of range [0, {v})")));
    }
    Ok(())
}

/// Max-subtracted log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn entropy_from_logprobs(logprobs: &[f64]) -> f64 {
    let h: f64 = logprobs
        .iter()
        .map(|&lp| {
            let p = lp.exp();
            if p > 0.0 {
                -p * lp
            } else {
                0.0
            }
        })
        .sum();
    h.max(0.0)
}

/// Trainable weights plus the AdamW moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub weights: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub update_count: u64,
}

impl PolicyParams {
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        let n = feature_dim * num_classes;
        Self {
            feature_dim,
            num_classes,
            weights: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            update_count: 0,
        }
    }

    pub fn from_weights(feature_dim: usize, num_classes: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != feature_dim * num_classes {
            return Err(domain(format!(
                "weights have length {}, expected {}",
                weights.len(),
                feature_dim * num_classes
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        let mut p = Self::zeros(feature_dim, num_classes);
        p.weights = weights;
        Ok(p)
    }

    /// Checks shapes and finiteness, e.g. after loading a checkpoint.
    pub fn validate(&self) -> Result<()> {
        let n = self.feature_dim * self.num_classes;
        if self.weights.len() != n || self.first_moment.len() != n || self.second_moment.len() != n {
            return Err(domain("parameter matrices do not match feature_dim x num_classes"));
        }
        let all = self
            .weights
            .iter()
            .chain(&self.first_moment)
            .chain(&self.second_moment);
        if all.clone().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn weight(&self, feature: usize, class: usize) -> f64 {
        self.weights[feature * self.num_classes + class]
    }

    pub fn weight_mut(&mut self, feature: usize, class: usize) -> &mut f64 {
        &mut self.weights[feature * self.num_classes + class]
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            weights: Arc::from(self.weights.as_slice()),
        }
    }
}

impl LinearSoftmax for PolicyParams {
    fn weights(&self) -> &[f64] {
        &self.weights
    }
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Frozen copy of the weights, used as the reference policy of the ratio.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    feature_dim: usize,
    num_classes: usize,
    weights: Arc<[f64]>,
}

impl LinearSoftmax for PolicySnapshot {
    fn weights(&self) -> &[f64] {
        &self.weights
    }
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// One sampled answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub instance_id: u64,
    pub template_id: Option<usize>,
    pub answer_class: usize,
    pub sampling_logprob: f64,
    /// The answer rendered as its decimal string.
    pub raw_text: String,
}

/// Draws a class index from a probability vector by inverse CDF.
pub(crate) fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the final partial sum.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Samples `n` independent answers from the policy at `temperature`.
pub fn sample_rollouts(
    policy: &impl LinearSoftmax,
    query: &RenderedQuery,
    n: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<Vec<Rollout>> {
    if n == 0 {
        return Err(domain("rollout count must be >= 1"));
    }
    let logprobs = policy.log_softmax(query, temperature)?;
    let probs: Vec<f64> = logprobs.iter().map(|lp| lp.exp()).collect();
    let mut rng = rng_for(rng_seed, &[]);
    Ok((0..n)
        .map(|_| {
            let class = sample_index(&probs, &mut rng);
            Rollout {
                instance_id: query.instance_id,
                template_id: query.template_id,
                answer_class: class,
                sampling_logprob: logprobs[class],
                raw_text: class.to_string(),
            }
        })
        .collect())
}

/// `∂ log p(class | x) / ∂W = (1/T) · x ⊗ (e_class − p)`, as an `F × V` row-major matrix.
pub fn logprob_grad(
    policy: &impl LinearSoftmax,
    query: &RenderedQuery,
    class: usize,
    temperature: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.feature_dim() * policy.num_classes()];
    accumulate_logprob_grad(policy, query, class, temperature, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale · ∂ log p(class | x) / ∂W` into `out`.
pub fn accumulate_logprob_grad(
    policy: &impl LinearSoftmax,
    query: &RenderedQuery,
    class: usize,
    temperature: f64,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let v = policy.num_classes();
    check_class(class, v)?;
    let probs = policy.probabilities(query, temperature)?;
    let mut coeff: Vec<f64> = probs.iter().map(|p| -p).collect();
    coeff[class] += 1.0;
    for c in &mut coeff {
        *c *= scale / temperature;
    }
    for (f, &x) in query.features.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &mut out[f * v..(f + 1) * v];
        for (o, &c) in row.iter_mut().zip(&coeff) {
            *o += x * c;
        }
    }
    Ok(())
}
