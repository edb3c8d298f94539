use std::collections::BTreeMap;

use proptest::prelude::*;
use varsynth_core::consensus::majority_vote;
use varsynth_core::grpo::OptimizerState;
use varsynth_core::init::initial_policy;
use rand::seq::SliceRandom;
use varsynth_core::rng::{rng_for, Purpose};
use varsynth_core::scheduler::{
    cge_step, ige_step, mixed_pool, plain_update, pool_shares, sample_group, MemberOutcome, MixedPool, QuerySeeds,
    StepContext,
};
use varsynth_core::synthesis::{admit_cluster, Admission, FilterConfig, QueryCluster};
use varsynth_core::task::{generate_problem_set, render, FamilyConfig, Operator, ProblemInstance};
use varsynth_core::telemetry::{Mode, TelemetryRecord, TelemetrySink};
use varsynth_core::{run_training, PolicyParams, Result, Rollout, TrainConfig};

fn instance() -> ProblemInstance {
    ProblemInstance {
        id: 4,
        left_operand: 2,
        right_operand: 5,
        operator: Operator::Add,
        modulus: 10,
        ground_truth: 7,
        origin_template: 0,
    }
}

fn cluster(variant_templates: &[usize]) -> QueryCluster {
    let fam = FamilyConfig::default();
    let origin = render(&instance(), 0, &fam).unwrap();
    let variants = variant_templates.iter().map(|&t| render(&instance(), t, &fam).unwrap()).collect();
    let vote = majority_vote(&[Some("7"), Some("7"), Some("3")]).unwrap();
    match admit_cluster(&origin, &vote, variants, &FilterConfig::default(), 40).unwrap() {
        Admission::Admitted(c) => c,
        other => panic!("{other:?}"),
    }
}

fn rollouts_with(text: &str, count: usize, member: usize) -> Vec<(Rollout, usize)> {
    (0..count)
        .map(|_| {
            let r = Rollout {
                instance_id: 4,
                template_id: Some(member),
                answer_class: 0,
                sampling_logprob: -1.0,
                raw_text: text.to_string(),
            };
            (r, member)
        })
        .collect()
}

#[test]
fn pool_shapes_from_the_examples() {
    let c = cluster(&[1, 2, 3]);
    let p = PolicyParams::zeros(256, 10);
    let pool = mixed_pool(&c, &p, 32, 0.6, 1).unwrap();
    assert_eq!(pool.per_member_counts, vec![8, 8, 8, 8]);
    assert_eq!(pool.len(), 32);
    let solo = cluster(&[]);
    let pool = mixed_pool(&solo, &p, 32, 0.6, 1).unwrap();
    assert_eq!(pool.per_member_counts, vec![32]);
    assert!(pool.sources.iter().all(|&s| s == 0));
    assert_eq!(pool_shares(30, 4).unwrap(), vec![8, 8, 7, 7]);
    assert!(mixed_pool(&c, &p, 3, 0.6, 1).is_err());
}

#[test]
fn joint_vote_over_union() {
    let tallies: [&[(&str, usize)]; 4] = [&[("A", 6), ("B", 2)], &[("A", 5), ("B", 3)], &[("B", 8)], &[("A", 7), ("B", 1)]];
    let mut tagged = Vec::new();
    for (m, t) in tallies.iter().enumerate() {
        for &(ans, n) in t.iter() {
            tagged.extend(rollouts_with(ans, n, m));
        }
    }
    // Independent union count.
    let mut union: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tallies {
        for &(a, n) in t {
            *union.entry(a).or_default() += n;
        }
    }
    assert_eq!(union, BTreeMap::from([("A", 18), ("B", 14)]));
    let pool = MixedPool {
        rollouts: tagged.iter().map(|(r, _)| r.clone()).collect(),
        sources: tagged.iter().map(|(_, m)| *m).collect(),
        per_member_counts: vec![8; 4],
    };
    let v = pool.joint_vote().unwrap();
    assert_eq!(v.pseudo_label.as_deref(), Some("A"));
    assert_eq!(v.tally["A"], 18);
    assert_eq!(v.tally["B"], 14);
    // Member 2 alone would vote B.
    let member2: Vec<Option<&str>> = tagged.iter().filter(|(_, m)| *m == 2).map(|(r, _)| Some(r.raw_text.as_str())).collect();
    assert_eq!(majority_vote(&member2).unwrap().pseudo_label.as_deref(), Some("B"));
}

/// Weights that send each template's private feature buckets to its own answer class.
fn template_biased_policy(classes: &[usize]) -> PolicyParams {
    let fam = FamilyConfig::default();
    let feats: Vec<Vec<f64>> = (0..classes.len()).map(|t| render(&instance(), t, &fam).unwrap().features).collect();
    let mut p = PolicyParams::zeros(256, 10);
    for (t, &class) in classes.iter().enumerate() {
        for f in 0..256 {
            let private = feats[t][f] > 0.0 && feats.iter().enumerate().all(|(o, x)| o == t || x[f] == 0.0);
            if private {
                *p.weight_mut(f, class) += 10.0;
            }
        }
    }
    p
}

fn ctx(opt: &OptimizerState) -> StepContext<'_> {
    StepContext { opt, group_size: 32, temperature: 0.6 }
}

#[test]
fn ige_updates_every_member_with_its_own_label() {
    let c = cluster(&[1, 2, 3]);
    let mut p = template_biased_policy(&[1, 2, 3, 4]);
    let opt = OptimizerState { total_steps: Some(100), ..OptimizerState::default() };
    let seeds = QuerySeeds { base: 23, step: 40, instance_id: 4 };
    let outcomes = ige_step(&c, &mut p, &ctx(&opt), 40, seeds, None, true).unwrap();
    assert_eq!(outcomes.len(), 4);
    let labels: Vec<String> = outcomes
        .iter()
        .map(|o| match o {
            MemberOutcome::Updated(u) => {
                assert_eq!(u.mode, Mode::Ige);
                u.pseudo_label.clone()
            }
            MemberOutcome::Skipped { .. } => panic!("synthetic members always vote"),
        })
        .collect();
    assert_eq!(labels, vec!["1", "2", "3", "4"]);
    let templates: Vec<Option<usize>> = outcomes
        .iter()
        .map(|o| match o {
            MemberOutcome::Updated(u) => u.template_id,
            _ => None,
        })
        .collect();
    assert_eq!(templates, vec![Some(0), Some(1), Some(2), Some(3)]);
    let applied = outcomes.iter().filter(|o| matches!(o, MemberOutcome::Updated(u) if u.report.applied)).count();
    assert_eq!(p.update_count, applied as u64);
}

#[test]
fn cge_is_one_update_against_the_joint_label() {
    let c = cluster(&[1, 2, 3]);
    let mut p = template_biased_policy(&[1, 1, 2, 1]);
    let opt = OptimizerState { total_steps: Some(100), ..OptimizerState::default() };
    let seeds = QuerySeeds { base: 23, step: 60, instance_id: 4 };
    let u = cge_step(&c, &mut p, &ctx(&opt), 60, seeds).unwrap().unwrap();
    assert_eq!(u.mode, Mode::Cge);
    assert_eq!(u.pseudo_label, "1");
    assert_eq!(u.template_id, None);
    assert_eq!(p.update_count, u.report.applied as u64);

    let mut agree = template_biased_policy(&[5, 5, 5, 5]);
    let u = cge_step(&c, &mut agree, &ctx(&opt), 60, seeds).unwrap().unwrap();
    assert_eq!(u.pseudo_label, "5");
    assert_eq!(u.group_accuracy, 1.0);
}

#[derive(Default)]
struct Collect {
    records: Vec<TelemetryRecord>,
    flushes: Vec<usize>,
}

impl TelemetrySink for Collect {
    fn record(&mut self, record: &TelemetryRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
    fn flush_step(&mut self, step: usize) -> Result<()> {
        self.flushes.push(step);
        Ok(())
    }
}

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.family.instance_count = 40;
    c.schedule.episodes = 16;
    c.schedule.e_intra = 10;
    c.schedule.e_cross = 20;
    c.group_size = 16;
    c.init.pretrain_steps = 100;
    c
}

#[test]
fn training_is_deterministic_and_logged() {
    let cfg = small_config();
    let problems = generate_problem_set(&cfg.family).unwrap();
    let init = initial_policy(&cfg.family, &cfg.init, cfg.seeds.init).unwrap();
    let (mut a, mut b) = (init.clone(), init);
    let mut sink = Collect::default();
    let log_a = run_training(&cfg, &problems, &mut a, &mut sink).unwrap();
    let log_b = run_training(&cfg, &problems, &mut b, &mut Collect::default()).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(a, b);
    assert_eq!(sink.records, log_a.records);
    assert_eq!(log_a.total_steps, 80);
    assert_eq!(sink.flushes, (0..80).collect::<Vec<_>>());
    let applied = log_a.records.iter().filter(|r| r.applied).count() as u64;
    assert_eq!(a.update_count, applied);
}

#[test]
fn stage_gates_hold() {
    let cfg = small_config();
    let problems = generate_problem_set(&cfg.family).unwrap();
    let mut p = initial_policy(&cfg.family, &cfg.init, cfg.seeds.init).unwrap();
    let log = run_training(&cfg, &problems, &mut p, &mut Collect::default()).unwrap();
    assert!(log.synthesis_calls.iter().all(|s| s.step >= 10));
    assert!(!log.synthesis_calls.is_empty());
    assert!(log.records.iter().filter(|r| r.step < 10).all(|r| r.mode == Mode::Plain && r.stage == 0));
    assert!(log.records.iter().filter(|r| r.mode == Mode::Cge).all(|r| r.step >= 20));
    assert!(log.records.iter().any(|r| r.mode == Mode::Ige && r.step < 20));
    for g in log.gates.iter().filter(|g| g.admitted && g.step >= 20) {
        let of = |m: Mode| log.records.iter().filter(|r| r.step == g.step && r.query_id == g.query_id && r.mode == m).count();
        assert_eq!(of(Mode::Ige), 1 + g.variants);
        assert_eq!(of(Mode::Cge), 1);
    }
    for g in log.gates.iter().filter(|g| !g.admitted) {
        assert!(!(0.125..=0.875).contains(&g.origin_accuracy));
    }
}

/// Plain GRPO on every query, reproducing the scheduler's batching and seed streams.
fn plain_loop(cfg: &TrainConfig, problems: &[ProblemInstance], params: &mut PolicyParams) {
    let cfg = cfg.resolved(problems.len());
    let ctx = StepContext { opt: &cfg.optimizer, group_size: cfg.group_size, temperature: cfg.rollout_temperature };
    let mut step = 0;
    for episode in 0..cfg.schedule.episodes {
        let mut order: Vec<usize> = (0..problems.len()).collect();
        order.shuffle(&mut rng_for(cfg.seeds.data, &[Purpose::Shuffle as u64, episode as u64]));
        for batch in order.chunks(cfg.schedule.batch_size) {
            for &i in batch {
                let inst = &problems[i];
                let origin = render(inst, inst.origin_template, &cfg.family).unwrap();
                let seeds = QuerySeeds { base: cfg.seeds.rollout, step, instance_id: inst.id };
                let group = sample_group(params, &origin, &ctx, seeds.origin()).unwrap();
                plain_update(params, &origin, group, &ctx, step, Mode::Plain).unwrap();
            }
            step += 1;
        }
    }
}

#[test]
fn single_member_ige_without_cge_is_plain_grpo() {
    let mut cfg = small_config();
    cfg.filter.k = 0;
    cfg.schedule.cge = false;
    let problems = generate_problem_set(&cfg.family).unwrap();
    let init = initial_policy(&cfg.family, &cfg.init, cfg.seeds.init).unwrap();
    let (mut ttvs, mut plain) = (init.clone(), init);
    let log = run_training(&cfg, &problems, &mut ttvs, &mut Collect::default()).unwrap();
    plain_loop(&cfg, &problems, &mut plain);
    assert!(log.records.iter().any(|r| r.mode == Mode::Ige));
    assert_eq!(ttvs, plain);
}

proptest! {
    #[test]
    fn pool_counts_are_balanced(n in 4usize..=64, k in 0usize..=7) {
        prop_assume!(n > k);
        let counts = pool_shares(n, k + 1).unwrap();
        prop_assert_eq!(counts.len(), k + 1);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mixed_pool_tags_sources(n in 4usize..=64, k in 0usize..=3, seed in any::<u64>()) {
        prop_assume!(n > k);
        let templates: Vec<usize> = (1..=k).collect();
        let c = cluster(&templates);
        let pool = mixed_pool(&c, &PolicyParams::zeros(256, 10), n, 0.6, seed).unwrap();
        prop_assert_eq!(pool.len(), n);
        for (j, &count) in pool.per_member_counts.iter().enumerate() {
            prop_assert_eq!(pool.sources.iter().filter(|&&s| s == j).count(), count);
        }
        for (r, &s) in pool.rollouts.iter().zip(&pool.sources) {
            prop_assert_eq!(r.template_id, Some(if s == 0 { 0 } else { templates[s - 1] }));
        }
    }
}
