//! The hybrid training loop.
//!
//! Every global step processes one batch of queries. Before `e_intra` each
//! query gets a plain GRPO update on its own rollouts. From `e_intra` the
//! origin's group accuracy gates synthesis: admitted queries become clusters
//! and get one independent update per member (IGE). From `e_cross` each
//! admitted cluster additionally gets a single update over a mixed rollout
//! pool scored against one joint vote (CGE).
//!
//! All rollout streams are keyed by `(step, query, member, purpose)`, so the
//! origin group of a query is the same whether it feeds a plain update or the
//! first IGE member.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::consensus::{majority_vote, reward_vector, ConsensusResult};
use crate::error::{domain, Error, Result};
use crate::grpo::{grpo_step, AdvantageBatch, OptimizerState, UpdateReport};
use crate::policy::{sample_rollouts, LinearSoftmax, PolicyParams, PolicySnapshot, Rollout};
use crate::rng::{derive_seed, rng_for, Purpose};
use crate::synthesis::{
    admit_cluster, difficulty_gate, synthesize_variants, Admission, QueryCluster, VariantSource,
};
use crate::task::{render, ProblemInstance, RenderedQuery};
use crate::telemetry::{Mode, TelemetryRecord, TelemetrySink};

/// Knobs shared by every group update.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub opt: &'a OptimizerState,
    pub group_size: usize,
    pub temperature: f64,
}

/// Result of one group update, before stage and oracle fields are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupUpdate {
    pub mode: Mode,
    pub instance_id: u64,
    pub template_id: Option<usize>,
    pub pseudo_label: String,
    pub group_accuracy: f64,
    pub entropy: f64,
    pub report: UpdateReport,
}

fn answers_of(rollouts: &[Rollout]) -> Vec<Option<&str>> {
    rollouts.iter().map(|r| Some(r.raw_text.as_str())).collect()
}

/// Scores `rollouts` against `label` and applies `inner_epochs` updates from one snapshot.
fn update_group(
    params: &mut PolicyParams,
    snapshot: &PolicySnapshot,
    rollouts: Vec<Rollout>,
    contexts: &[&RenderedQuery],
    label: &str,
    ctx: &StepContext<'_>,
    step: usize,
) -> Result<UpdateReport> {
    let rewards = reward_vector(&answers_of(&rollouts), Some(label))?;
    let batch = AdvantageBatch::new(rollouts, rewards, snapshot, contexts, ctx.opt, ctx.temperature)?;
    let mut report = None;
    for _ in 0..ctx.opt.inner_epochs {
        report = Some(grpo_step(params, &batch, contexts, ctx.opt, step, ctx.temperature)?);
    }
    Ok(report.expect("inner_epochs >= 1"))
}

/// A rollout group sampled for one query, with the snapshot it was sampled from.
pub struct SampledGroup {
    pub snapshot: PolicySnapshot,
    pub rollouts: Vec<Rollout>,
    pub consensus: ConsensusResult,
}

pub fn sample_group(
    params: &PolicyParams,
    query: &RenderedQuery,
    ctx: &StepContext<'_>,
    seed: u64,
) -> Result<SampledGroup> {
    let snapshot = params.snapshot();
    let rollouts = sample_rollouts(&snapshot, query, ctx.group_size, ctx.temperature, seed)?;
    let consensus = majority_vote(&answers_of(&rollouts))?;
    Ok(SampledGroup {
        snapshot,
        rollouts,
        consensus,
    })
}

/// One plain GRPO update on a pre-sampled group, voting on its own rollouts.
pub fn plain_update(
    params: &mut PolicyParams,
    query: &RenderedQuery,
    group: SampledGroup,
    ctx: &StepContext<'_>,
    step: usize,
    mode: Mode,
) -> Result<Option<GroupUpdate>> {
    let Some(label) = group.consensus.pseudo_label.clone() else {
        return Ok(None);
    };
    let entropy = group.snapshot.entropy(query, ctx.temperature)?;
    let contexts = vec![query; group.rollouts.len()];
    let report = update_group(params, &group.snapshot, group.rollouts, &contexts, &label, ctx, step)?;
    Ok(Some(GroupUpdate {
        mode,
        instance_id: query.instance_id,
        template_id: query.template_id,
        pseudo_label: label,
        group_accuracy: group.consensus.group_accuracy,
        entropy,
        report,
    }))
}

/// Seeds for the rollout streams of one query at one step.
#[derive(Debug, Clone, Copy)]
pub struct QuerySeeds {
    pub base: u64,
    pub step: usize,
    pub instance_id: u64,
}

impl QuerySeeds {
    pub fn origin(&self) -> u64 {
        derive_seed(self.base, &[Purpose::Origin as u64, self.step as u64, self.instance_id])
    }

    pub fn member(&self, member: usize) -> u64 {
        derive_seed(
            self.base,
            &[Purpose::Member as u64, self.step as u64, self.instance_id, member as u64],
        )
    }

    pub fn mixed(&self) -> u64 {
        derive_seed(self.base, &[Purpose::Mixed as u64, self.step as u64, self.instance_id])
    }
}

/// Outcome of IGE for one member.
#[derive(Debug, Clone, PartialEq)]
pub enum MemberOutcome {
    Updated(GroupUpdate),
    /// The member's vote produced no label.
    Skipped { member: usize },
}

/// Intra-group exploration: an independent vote and update per cluster member,
/// in order, each against the live parameters with a fresh snapshot.
///
/// `origin_group`, when given, is used as member 0's rollouts instead of sampling anew;
/// it must have been sampled from the current parameters.
pub fn ige_step(
    cluster: &QueryCluster,
    params: &mut PolicyParams,
    ctx: &StepContext<'_>,
    step: usize,
    seeds: QuerySeeds,
    origin_group: Option<SampledGroup>,
    revote_members: bool,
) -> Result<Vec<MemberOutcome>> {
    let mut origin_group = origin_group;
    let mut out = Vec::with_capacity(cluster.member_count());
    for (j, member) in cluster.members().enumerate() {
        let group = match (j, origin_group.take()) {
            (0, Some(g)) => g,
            _ => sample_group(params, member, ctx, seeds.member(j))?,
        };
        let label = if revote_members || j == 0 {
            group.consensus.pseudo_label.clone()
        } else {
            Some(cluster.pseudo_label.clone())
        };
        let Some(label) = label else {
            out.push(MemberOutcome::Skipped { member: j });
            continue;
        };
        let accuracy = group
            .consensus
            .tally
            .get(&label)
            .map_or(0.0, |&c| c as f64 / group.consensus.n_total as f64);
        let entropy = group.snapshot.entropy(member, ctx.temperature)?;
        let contexts = vec![member; group.rollouts.len()];
        let report = update_group(params, &group.snapshot, group.rollouts, &contexts, &label, ctx, step)?;
        out.push(MemberOutcome::Updated(GroupUpdate {
            mode: Mode::Ige,
            instance_id: member.instance_id,
            template_id: member.template_id,
            pseudo_label: label,
            group_accuracy: accuracy,
            entropy,
            report,
        }));
    }
    Ok(out)
}

/// Rollouts drawn in near-equal shares from every member of a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPool {
    pub rollouts: Vec<Rollout>,
    /// Member index (0 = original) each rollout was sampled from.
    pub sources: Vec<usize>,
    pub per_member_counts: Vec<usize>,
}

impl MixedPool {
    /// One vote over the whole pool.
    pub fn joint_vote(&self) -> Result<ConsensusResult> {
        majority_vote(&answers_of(&self.rollouts))
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }
}

/// `⌊n/(k+1)⌋` slots per member, with the `n mod (k+1)` extra slots going to
/// members `0, 1, …` in order.
pub fn pool_shares(n: usize, members: usize) -> Result<Vec<usize>> {
    if members == 0 {
        return Err(domain("a cluster has at least one member"));
    }
    if n < members {
        return Err(domain(format!("pool size {n} is smaller than the member count {members}")));
    }
    let base = n / members;
    let extra = n % members;
    Ok((0..members).map(|j| base + usize::from(j < extra)).collect())
}

pub fn mixed_pool(
    cluster: &QueryCluster,
    policy: &impl LinearSoftmax,
    n: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<MixedPool> {
    let counts = pool_shares(n, cluster.member_count())?;
    let mut rollouts = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for (j, (member, &count)) in cluster.members().zip(&counts).enumerate() {
        if count == 0 {
            continue;
        }
        let drawn = sample_rollouts(policy, member, count, temperature, derive_seed(rng_seed, &[j as u64]))?;
        sources.extend(std::iter::repeat_n(j, drawn.len()));
        rollouts.extend(drawn);
    }
    Ok(MixedPool {
        rollouts,
        sources,
        per_member_counts: counts,
    })
}

/// Cross-group exploration: one joint vote over a mixed pool and one update.
/// Each pooled rollout's ratio is taken against its own source query.
pub fn cge_step(
    cluster: &QueryCluster,
    params: &mut PolicyParams,
    ctx: &StepContext<'_>,
    step: usize,
    seeds: QuerySeeds,
) -> Result<Option<GroupUpdate>> {
    let snapshot = params.snapshot();
    let pool = mixed_pool(cluster, &snapshot, ctx.group_size, ctx.temperature, seeds.mixed())?;
    let vote = pool.joint_vote()?;
    let Some(label) = vote.pseudo_label.clone() else {
        return Ok(None);
    };
    let members: Vec<&RenderedQuery> = cluster.members().collect();
    let contexts: Vec<&RenderedQuery> = pool.sources.iter().map(|&j| members[j]).collect();
    let entropy = members
        .iter()
        .map(|m| snapshot.entropy(m, ctx.temperature))
        .sum::<Result<f64>>()?
        / members.len() as f64;
    let report = update_group(params, &snapshot, pool.rollouts, &contexts, &label, ctx, step)?;
    Ok(Some(GroupUpdate {
        mode: Mode::Cge,
        instance_id: cluster.original.instance_id,
        template_id: None,
        pseudo_label: label,
        group_accuracy: vote.group_accuracy,
        entropy,
        report,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisCall {
    pub step: usize,
    pub query_id: u64,
    pub variants: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEvent {
    pub step: usize,
    pub query_id: u64,
    pub origin_accuracy: f64,
    pub admitted: bool,
    pub variants: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEvent {
    pub step: usize,
    pub query_id: u64,
    pub mode: Mode,
    pub member: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<TelemetryRecord>,
    pub synthesis_calls: Vec<SynthesisCall>,
    /// Difficulty-gate outcomes from stage 1 on.
    pub gates: Vec<GateEvent>,
    pub skips: Vec<SkipEvent>,
    pub total_steps: usize,
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    pool: Vec<usize>,
    cache: HashMap<u64, (usize, Vec<RenderedQuery>)>,
    log: TrainingLog,
    sink: &'a mut dyn TelemetrySink,
}

impl Trainer<'_> {
    fn ctx(&self) -> StepContext<'_> {
        StepContext {
            opt: &self.config.optimizer,
            group_size: self.config.group_size,
            temperature: self.config.rollout_temperature,
        }
    }

    fn emit(&mut self, step: usize, stage: u8, truth: u32, u: GroupUpdate) -> Result<()> {
        let record = TelemetryRecord {
            step,
            stage,
            query_id: u.instance_id,
            template_id: u.template_id,
            mode: u.mode,
            label_correct_vs_oracle: u.pseudo_label == truth.to_string(),
            pseudo_label: u.pseudo_label,
            group_accuracy: u.group_accuracy,
            entropy: u.entropy,
            objective: u.report.objective,
            grad_norm: u.report.grad_norm,
            lr: u.report.lr,
            applied: u.report.applied,
        };
        self.sink.record(&record)?;
        self.log.records.push(record);
        Ok(())
    }

    fn emit_or_skip(
        &mut self,
        step: usize,
        stage: u8,
        inst: &ProblemInstance,
        update: Option<GroupUpdate>,
        mode: Mode,
    ) -> Result<()> {
        match update {
            Some(u) => self.emit(step, stage, inst.ground_truth, u),
            None => {
                self.log.skips.push(SkipEvent {
                    step,
                    query_id: inst.id,
                    mode,
                    member: 0,
                });
                Ok(())
            }
        }
    }

    /// Cached variants for `inst`, synthesizing on first admission (or once per episode).
    fn variants_for(
        &mut self,
        inst: &ProblemInstance,
        origin: &RenderedQuery,
        label: &str,
        step: usize,
        episode: usize,
    ) -> Result<Vec<RenderedQuery>> {
        let k = self.config.filter.k;
        if k == 0 {
            return Ok(Vec::new());
        }
        let stale = match self.cache.get(&inst.id) {
            Some((ep, _)) => self.config.schedule.regenerate_clusters && *ep != episode,
            None => true,
        };
        if stale {
            let seed = if self.config.schedule.regenerate_clusters {
                derive_seed(self.config.seeds.rollout, &[Purpose::Synthesis as u64, episode as u64])
            } else {
                derive_seed(self.config.seeds.rollout, &[Purpose::Synthesis as u64])
            };
            let source = VariantSource::Synthetic {
                instance: inst,
                family: &self.config.family,
                pool: &self.pool,
                rng_seed: seed,
            };
            let variants = match synthesize_variants(&source, origin, label, k) {
                Ok(s) => s.variants,
                Err(Error::SynthesisFailed(_)) => Vec::new(),
                Err(e) => return Err(e),
            };
            self.log.synthesis_calls.push(SynthesisCall {
                step,
                query_id: inst.id,
                variants: variants.len(),
            });
            self.cache.insert(inst.id, (episode, variants));
        }
        Ok(self.cache[&inst.id].1.clone())
    }

    fn process_query(
        &mut self,
        params: &mut PolicyParams,
        inst: &ProblemInstance,
        step: usize,
        episode: usize,
    ) -> Result<()> {
        let schedule = &self.config.schedule;
        let stage = schedule.stage(step);
        let (ige_on, cge_on, ige_first) = (schedule.ige, schedule.cge, schedule.ige_before_cge);
        let (train_rejected, revote) = (schedule.train_rejected, schedule.revote_members);
        let origin = render(inst, inst.origin_template, &self.config.family)?;
        let seeds = QuerySeeds {
            base: self.config.seeds.rollout,
            step,
            instance_id: inst.id,
        };
        let group = sample_group(params, &origin, &self.ctx(), seeds.origin())?;

        if stage == 0 {
            let u = plain_update(params, &origin, group, &self.ctx(), step, Mode::Plain)?;
            return self.emit_or_skip(step, stage, inst, u, Mode::Plain);
        }

        let Some(label) = group.consensus.pseudo_label.clone() else {
            return self.emit_or_skip(step, stage, inst, None, Mode::Plain);
        };
        let accuracy = group.consensus.group_accuracy;
        if difficulty_gate(accuracy, &self.config.filter).is_err() {
            self.log.gates.push(GateEvent {
                step,
                query_id: inst.id,
                origin_accuracy: accuracy,
                admitted: false,
                variants: 0,
            });
            if train_rejected {
                let u = plain_update(params, &origin, group, &self.ctx(), step, Mode::Plain)?;
                self.emit_or_skip(step, stage, inst, u, Mode::Plain)?;
            }
            return Ok(());
        }

        let variants = self.variants_for(inst, &origin, &label, step, episode)?;
        let cluster = match admit_cluster(&origin, &group.consensus, variants, &self.config.filter, step)? {
            Admission::Admitted(c) => c,
            Admission::Rejected { .. } => unreachable!("difficulty gate already passed"),
        };
        self.log.gates.push(GateEvent {
            step,
            query_id: inst.id,
            origin_accuracy: accuracy,
            admitted: true,
            variants: cluster.variants.len(),
        });

        let run_cge = cge_on && stage == 2;
        let mut origin_group = Some(group);
        if run_cge && !ige_first {
            self.run_cge(params, &cluster, inst, step, stage, seeds)?;
            origin_group = None;
        }
        if ige_on {
            let ctx = self.ctx();
            let outcomes = ige_step(&cluster, params, &ctx, step, seeds, origin_group, revote)?;
            for o in outcomes {
                match o {
                    MemberOutcome::Updated(u) => self.emit(step, stage, inst.ground_truth, u)?,
                    MemberOutcome::Skipped { member } => self.log.skips.push(SkipEvent {
                        step,
                        query_id: inst.id,
                        mode: Mode::Ige,
                        member,
                    }),
                }
            }
        } else if !run_cge {
            let g = match origin_group {
                Some(g) => g,
                None => sample_group(params, &origin, &self.ctx(), seeds.member(0))?,
            };
            let u = plain_update(params, &origin, g, &self.ctx(), step, Mode::Plain)?;
            self.emit_or_skip(step, stage, inst, u, Mode::Plain)?;
        }
        if run_cge && ige_first {
            self.run_cge(params, &cluster, inst, step, stage, seeds)?;
        }
        Ok(())
    }

    fn run_cge(
        &mut self,
        params: &mut PolicyParams,
        cluster: &QueryCluster,
        inst: &ProblemInstance,
        step: usize,
        stage: u8,
        seeds: QuerySeeds,
    ) -> Result<()> {
        let ctx = self.ctx();
        let u = cge_step(cluster, params, &ctx, step, seeds)?;
        self.emit_or_skip(step, stage, inst, u, Mode::Cge)
    }
}

/// Runs the full schedule over `problems`, mutating `params`.
pub fn run_training(
    config: &TrainConfig,
    problems: &[ProblemInstance],
    params: &mut PolicyParams,
    sink: &mut dyn TelemetrySink,
) -> Result<TrainingLog> {
    config.validate()?;
    if problems.is_empty() {
        return Err(domain("training needs at least one problem"));
    }
    if params.num_classes != config.family.num_classes() || params.feature_dim != config.family.feature_dim {
        return Err(domain("policy shape does not match the problem family"));
    }
    let config = config.resolved(problems.len());
    let total_steps = config.schedule.total_steps(problems.len());
    let mut trainer = Trainer {
        config: &config,
        pool: config.variant_pool(),
        cache: HashMap::new(),
        log: TrainingLog {
            total_steps,
            ..TrainingLog::default()
        },
        sink,
    };
    let mut step = 0usize;
    for episode in 0..config.schedule.episodes {
        let mut order: Vec<usize> = (0..problems.len()).collect();
        order.shuffle(&mut rng_for(config.seeds.data, &[Purpose::Shuffle as u64, episode as u64]));
        for batch in order.chunks(config.schedule.batch_size) {
            for &i in batch {
                if let Err(e) = trainer.process_query(params, &problems[i], step, episode) {
                    trainer.sink.flush_step(step)?;
                    return Err(e);
                }
            }
            trainer.sink.flush_step(step)?;
            step += 1;
        }
    }
    Ok(trainer.log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares() {
        assert_eq!(pool_shares(32, 4).unwrap(), vec![8; 4]);
        assert_eq!(pool_shares(30, 4).unwrap(), vec![8, 8, 7, 7]);
        assert_eq!(pool_shares(5, 1).unwrap(), vec![5]);
        assert!(pool_shares(3, 4).is_err());
    }
}
