//! `modeswitch` — regenerates the datasets, trained models and sweep tables.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use modeswitch_core::experiment::{self, infeasible_targets, ExperimentConfig, SweepKind};

#[derive(Parser, Debug)]
#[command(name = "modeswitch", version, about = "Intelligent mode switching for teleoperation: training and sweeps")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the Monte Carlo episodes per sweep point.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic letter-trajectory dataset.
    GenData,
    /// Train the intention classifier; writes the accuracy curve.
    TrainIntent,
    /// Train LSTM and CNN trajectory predictors; writes the RRMSE table and error curve.
    TrainTraj,
    /// Train the DQN switching agent; writes its checkpoint and training curve.
    TrainDqn,
    /// Success and load against the teleoperation fraction.
    SweepPt,
    /// Proposed vs conventional over packet-loss probabilities.
    SweepLoss,
    /// Proposed vs conventional over operator experience.
    SweepOperator,
    /// Slot-by-slot log of one episode.
    Trace,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainIntent => "train-intent",
            Command::TrainTraj => "train-traj",
            Command::TrainDqn => "train-dqn",
            Command::SweepPt => "sweep-pt",
            Command::SweepLoss => "sweep-loss",
            Command::SweepOperator => "sweep-operator",
            Command::Trace => "trace",
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.episodes {
        cfg.sweep.episodes = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Value> {
    if let Some(n) = cli.workers {
        anyhow::ensure!(n > 0, "--workers must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_path();
    let mut summary = json!({
        "command": cli.command.name(),
        "out": out.display().to_string(),
        "seed": cfg.seed,
        "config_sha256": cfg.hash(),
    });
    let extra = match cli.command {
        Command::GenData => {
            let ds = experiment::gen_data(&cfg, out)?;
            json!({ "trajectories": ds.trajectories.len(), "points": ds.total_points() })
        }
        Command::TrainIntent => {
            let curve = experiment::train_intent(&cfg, out)?;
            json!({ "accuracy_curve": curve.points() })
        }
        Command::TrainTraj => {
            let (rows, curve) = experiment::train_traj(&cfg, out)?;
            json!({ "rrmse_rows": rows.len(), "traj_error_curve": curve.points() })
        }
        Command::TrainDqn => {
            let o = experiment::train_dqn(&cfg, out)?;
            json!({ "best_success": o.best_success, "best_step": o.best_step, "collapsed": o.collapsed })
        }
        Command::SweepPt | Command::SweepLoss | Command::SweepOperator => {
            let kind = match cli.command {
                Command::SweepPt => SweepKind::Pt,
                Command::SweepLoss => SweepKind::Loss,
                _ => SweepKind::Operator,
            };
            let bad = infeasible_targets(&cfg.sweep.pt_grid, cfg.task.total_slots);
            if kind == SweepKind::Pt && !bad.is_empty() {
                eprintln!(
                    "{}",
                    json!({ "warning": "P^t targets not a multiple of 1/Z; realised fractions round up", "targets": bad })
                );
            }
            let rows = experiment::run_sweep(&cfg, out, kind)?;
            json!({ "rows": rows.len() })
        }
        Command::Trace => {
            let r = experiment::trace(&cfg, out)?;
            json!({ "label": r.label, "success": r.success, "tele_slots": r.tele_slots, "switches": r.switches.len() })
        }
    };
    if let (Value::Object(m), Value::Object(e)) = (&mut summary, extra) {
        m.extend(e);
    }
    Ok(summary)
}

fn error_line(kind: &str, msg: &str) -> String {
    json!({ "error": kind, "message": msg }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", error_line(cli.command.name(), &msg));
            ExitCode::FAILURE
        }
    }
}
