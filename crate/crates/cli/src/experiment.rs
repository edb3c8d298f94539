//! One training run: initial policy, schedule, evaluation before and after.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use varsynth_core::checkpoint::Checkpoint;
use varsynth_core::eval::{evaluate_pass1, Pass1Report};
use varsynth_core::init::initial_policy;
use varsynth_core::task::{generate_problem_set, ProblemInstance};
use varsynth_core::telemetry::{JsonlSink, Mode, TelemetrySink};
use varsynth_core::{run_training, PolicyParams, TrainConfig, TrainingLog};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeCounts {
    pub plain: usize,
    pub ige: usize,
    pub cge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub total_steps: usize,
    pub update_reports: usize,
    pub applied_updates: usize,
    pub reports_by_mode: ModeCounts,
    pub synthesis_calls: usize,
    pub admitted_gates: usize,
    pub rejected_gates: usize,
    pub skipped_updates: usize,
    pub initial: Pass1Report,
    #[serde(rename = "final")]
    pub trained: Pass1Report,
    /// Change in training-template pass@1, in absolute points of accuracy (0..1).
    pub training_gain: f64,
    pub heldout_gain: f64,
}

pub struct RunOutcome {
    pub summary: RunSummary,
    pub log: TrainingLog,
    pub params: PolicyParams,
    pub problems: Vec<ProblemInstance>,
}

pub fn evaluate(config: &TrainConfig, policy: &PolicyParams, problems: &[ProblemInstance]) -> Result<Pass1Report> {
    Ok(evaluate_pass1(policy, problems, &config.family, &config.eval, config.seeds.eval)?)
}

/// Trains from the configured initial policy, streaming telemetry into `sink`.
pub fn run_experiment(config: &TrainConfig, sink: &mut dyn TelemetrySink) -> Result<RunOutcome> {
    config.validate()?;
    let problems = generate_problem_set(&config.family)?;
    let mut params = initial_policy(&config.family, &config.init, config.seeds.init)?;
    let initial = evaluate(config, &params, &problems)?;
    let log = run_training(config, &problems, &mut params, sink)?;
    let trained = evaluate(config, &params, &problems)?;
    let count = |m: Mode| log.records.iter().filter(|r| r.mode == m).count();
    let gain = |a: Option<f64>, b: Option<f64>| b.unwrap_or(0.0) - a.unwrap_or(0.0);
    let summary = RunSummary {
        total_steps: log.total_steps,
        update_reports: log.records.len(),
        applied_updates: log.records.iter().filter(|r| r.applied).count(),
        reports_by_mode: ModeCounts {
            plain: count(Mode::Plain),
            ige: count(Mode::Ige),
            cge: count(Mode::Cge),
        },
        synthesis_calls: log.synthesis_calls.len(),
        admitted_gates: log.gates.iter().filter(|g| g.admitted).count(),
        rejected_gates: log.gates.iter().filter(|g| !g.admitted).count(),
        skipped_updates: log.skips.len(),
        training_gain: gain(initial.training, trained.training),
        heldout_gain: gain(initial.heldout, trained.heldout),
        initial,
        trained,
    };
    Ok(RunOutcome {
        summary,
        log,
        params,
        problems,
    })
}

pub struct RunFiles {
    pub telemetry: PathBuf,
    pub checkpoint: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
}

/// Runs and writes telemetry, the final checkpoint, the summary and the resolved config into `out`.
pub fn run_to_dir(config: &TrainConfig, out: &Path) -> Result<(RunOutcome, RunFiles)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = RunFiles {
        telemetry: config.telemetry_path.clone().unwrap_or_else(|| out.join("telemetry.jsonl")),
        checkpoint: out.join("checkpoint.json"),
        summary: out.join("summary.json"),
        config: out.join("config.json"),
    };
    let mut sink = JsonlSink::create(&files.telemetry)?;
    let outcome = run_experiment(config, &mut sink)?;
    drop(sink);
    Checkpoint::new(outcome.params.clone(), outcome.log.total_steps).save(&files.checkpoint)?;
    std::fs::write(&files.summary, serde_json::to_string_pretty(&outcome.summary)?)?;
    std::fs::write(&files.config, config.to_json_pretty())?;
    Ok((outcome, files))
}
