use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use varsynth_cli::{audit, experiment, plots, sweep};
use varsynth_core::checkpoint::Checkpoint;
use varsynth_core::load_config;
use varsynth_core::task::generate_problem_set;
use varsynth_remote::fixture::{FixtureServer, Transcript};
use varsynth_remote::load_endpoint;

#[derive(Parser)]
#[command(name = "varsynth", version, about = "Test-time RL with query variant synthesis on a synthetic task family")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from the initial policy and write telemetry, checkpoint and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// pass@1 of a checkpoint on the configured problem set.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Vote, filter and synthesize on a remote model's outputs, with no updates.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        endpoint: PathBuf,
        /// Serve this transcript locally and audit against it.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-metric CSV and SVG from a telemetry file.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every point of a grid of config overrides.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Serve a fixture transcript as a chat-completions endpoint.
    ServeFixture {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: SocketAddr,
    },
}

fn pct(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{:.1}", 100.0 * v))
}

#[tokio::main]
async fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let start = std::time::Instant::now();
            let (outcome, files) = tokio::task::spawn_blocking(move || experiment::run_to_dir(&cfg, &out)).await??;
            let s = &outcome.summary;
            println!(
                "{} steps, {} update reports ({} plain, {} ige, {} cge), {} synthesis calls, {:.1}s",
                s.total_steps,
                s.update_reports,
                s.reports_by_mode.plain,
                s.reports_by_mode.ige,
                s.reports_by_mode.cge,
                s.synthesis_calls,
                start.elapsed().as_secs_f64()
            );
            println!(
                "pass@1 training templates {} -> {}, held-out templates {} -> {}",
                pct(s.initial.training),
                pct(s.trained.training),
                pct(s.initial.heldout),
                pct(s.trained.heldout)
            );
            println!("telemetry {}", files.telemetry.display());
            println!("checkpoint {}", files.checkpoint.display());
            println!("summary {}", files.summary.display());
        }
        Command::Eval { config, checkpoint } => {
            let cfg = load_config(&config)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let problems = generate_problem_set(&cfg.family)?;
            let report = experiment::evaluate(&cfg, &ck.params, &problems)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Audit {
            config,
            endpoint,
            fixture,
            out,
        } => {
            let cfg = load_config(&config)?;
            let ep = load_endpoint(&endpoint)?;
            let report = audit::run_audit(&cfg, ep, fixture.as_deref()).await?;
            let text = report.to_json_pretty();
            match out {
                Some(p) => {
                    std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
                    eprintln!(
                        "{} admitted, {} rejected, {} failed; report {}",
                        report.admitted,
                        report.rejected,
                        report.failed,
                        p.display()
                    );
                }
                None => println!("{text}"),
            }
        }
        Command::Plot { log, out } => {
            let o = plots::emit_plots(&log, &out)?;
            println!("{} records plotted into {}", o.rows, out.display());
        }
        Command::Sweep { config, grid, out } => {
            let base = load_config(&config)?;
            let grid = sweep::parse_grid(&std::fs::read_to_string(&grid)?)?;
            let rows = tokio::task::spawn_blocking(move || sweep::run_sweep(&base, &grid)).await??;
            std::fs::create_dir_all(&out)?;
            sweep::write_sweep_csv(&rows, &out.join("sweep.csv"))?;
            std::fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
            println!("{} grid points written to {}", rows.len(), out.join("sweep.csv").display());
        }
        Command::ServeFixture { transcript, addr } => {
            let server = FixtureServer::bind(Transcript::load(&transcript)?, addr).await?;
            eprintln!("serving {} at {}", transcript.display(), server.base_url());
            tokio::select! {
                r = server.wait() => r?,
                _ = tokio::signal::ctrl_c() => {}
            }
        }
    }
    Ok(())
}
