//! The `riskadapt` command-line surface.
//!
//! Subcommands: `train`, `eval`, `disturb`, `sweep`, `plot`. Every run
//! writes a self-describing directory: resolved config, a meta record with
//! the binary's version string and its git-style blob hash, stats CSV,
//! checkpoints, and evaluation CSV/JSON. Exit codes: 0 success, 2
//! usage/config error, 3 numerical abort.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{resolve_config, ConfigError, EnvKind, ExperimentConfig};
use crate::env::{BalancerEnv, DisturbanceSchedule, Env, RiskyChoiceEnv};
use crate::metrics::{
    cvtrace_csv, metrics_csv, read_csv_strict, stats_csv, MetricsError, MetricsRecord,
};
use crate::nn::NnError;
use crate::plot;
use crate::ppo::{
    evaluate, train_iteration, EvalProtocol, EvalReport, IterationStats, RiskMode, TrainError,
    TrainState,
};
use crate::util::git_blob_sha1;

pub const VERSION_STRING: &str = concat!("riskadapt ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "riskadapt", version, about = "risk-adaptive distributional PPO at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct ConfigArgs {
    /// Experiment config file (TOML); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (shorthand for --override run.seed=N)
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; overrides RISKADAPT_OUT and the config's run.out_dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path config override, e.g. algo.clip_eps=0.1 (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy and write stats, checkpoints, and the resolved config
    Train {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Evaluate a checkpoint over a velocity grid
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        /// Checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated target velocities (m/s)
        #[arg(long, allow_hyphen_values = true)]
        velocities: Option<String>,
    },
    /// Zero-command evaluation under scheduled pushes with a CV trace
    Disturb {
        #[command(flatten)]
        common: ConfigArgs,
        /// Checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train a matrix of risk modes and seeds, then aggregate reward curves
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated risk modes (default: all five)
        #[arg(long)]
        modes: Option<String>,
        /// Comma-separated seeds (default: 0,1,2)
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Render a CSV into a deterministic SVG
    Plot {
        /// Input CSV file
        #[arg(long)]
        input: PathBuf,
        /// Plot kind: learning-curves, velocity-bars, or cv-trace
        #[arg(long)]
        kind: String,
        /// Output SVG path (default: input with .svg extension)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Plot(#[from] plot::PlotError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Train(TrainError::NonFinite { .. })
            | CliError::Train(TrainError::Nn(NnError::NonFiniteGradient { .. }))
            | CliError::Train(TrainError::Nn(NnError::NonFiniteParameter { .. })) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parse argv, run, and map errors onto the documented exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common } => {
            let (config, out_root) = load_config(&common)?;
            let run_dir = cmd_train(&config, &out_root)?;
            println!("run directory: {}", run_dir.display());
            Ok(())
        }
        Command::Eval {
            common,
            checkpoint,
            velocities,
        } => cmd_eval(&common, &checkpoint, velocities.as_deref()),
        Command::Disturb { common, checkpoint } => cmd_disturb(&common, &checkpoint),
        Command::Sweep {
            common,
            modes,
            seeds,
        } => cmd_sweep(&common, modes.as_deref(), seeds.as_deref()),
        Command::Plot { input, kind, out } => cmd_plot(&input, &kind, out),
    }
}

/// Resolve config plus the output root (flag > RISKADAPT_OUT > config).
fn load_config(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let config = resolve_config(args.config.as_deref(), &overrides)?;
    let out_root = args
        .out
        .clone()
        .or_else(|| std::env::var_os("RISKADAPT_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.run.out_dir));
    Ok((config, out_root))
}

fn write_run_preamble(config: &ExperimentConfig, run_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(run_dir).map_err(|e| io_err(run_dir, e))?;
    let config_path = run_dir.join("config.toml");
    fs::write(&config_path, config.to_toml()).map_err(|e| io_err(&config_path, e))?;
    let meta = serde_json::json!({
        "run_id": config.run_id(),
        "version": VERSION_STRING,
        "version_blob_sha1": git_blob_sha1(VERSION_STRING.as_bytes()),
        "seed": config.run.seed,
        "risk_mode": config.algo.risk_mode.as_str(),
        "env_kind": match config.env.kind {
            EnvKind::Balancer => "balancer",
            EnvKind::RiskyChoice => "risky_choice",
        },
    });
    let meta_path = run_dir.join("meta.json");
    fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )
    .map_err(|e| io_err(&meta_path, e))?;
    Ok(())
}

/// Run the full training loop into `<out_root>/<run_id>`; returns the run
/// directory.
pub fn cmd_train(config: &ExperimentConfig, out_root: &Path) -> Result<PathBuf, CliError> {
    let run_dir = out_root.join(config.run_id());
    write_run_preamble(config, &run_dir)?;
    let stats = match config.env.kind {
        EnvKind::Balancer => {
            let envs: Result<Vec<BalancerEnv>, _> = (0..config.algo.n_envs)
                .map(|e| {
                    BalancerEnv::new(config.env.balancer.clone(), config.run.seed, e as u64)
                })
                .collect();
            train_loop(config, envs.map_err(TrainError::from)?, &run_dir)?
        }
        EnvKind::RiskyChoice => {
            let envs: Vec<RiskyChoiceEnv> = (0..config.algo.n_envs)
                .map(|e| RiskyChoiceEnv::new(config.run.seed, e as u64))
                .collect();
            train_loop(config, envs, &run_dir)?
        }
    };
    let stats_path = run_dir.join("stats.csv");
    fs::write(&stats_path, stats_csv(&stats)).map_err(|e| io_err(&stats_path, e))?;
    Ok(run_dir)
}

fn train_loop<E: Env>(
    config: &ExperimentConfig,
    mut envs: Vec<E>,
    run_dir: &Path,
) -> Result<Vec<IterationStats>, CliError> {
    let algo = &config.algo;
    let mut state = TrainState::new(
        algo,
        envs[0].actor_obs_dim(),
        envs[0].privileged_obs_dim(),
        envs[0].action_dim(),
        config.run.seed,
    )?;
    let mut stats = Vec::with_capacity(algo.total_iterations as usize);
    let mut eval_rows: Vec<MetricsRecord> = Vec::new();
    for it in 0..algo.total_iterations {
        stats.push(train_iteration(&mut state, &mut envs, algo)?);
        let done = it + 1;
        if config.run.checkpoint_cadence > 0
            && done % config.run.checkpoint_cadence == 0
            && done != algo.total_iterations
        {
            let path = run_dir.join(format!("ckpt_{done:06}.bin"));
            state.to_checkpoint().save(&path)?;
        }
        if config.run.eval_cadence > 0
            && done % config.run.eval_cadence == 0
            && config.env.kind == EnvKind::Balancer
        {
            let protocol = EvalProtocol {
                velocities: vec![-0.5, 0.0, 0.5],
                n_envs: 16,
                episode_len: config.env.balancer.horizon,
                disturbance: None,
                seed: config.run.seed ^ done,
                record_cv_trace: false,
            };
            let report = evaluate(&state.actor, &state.critic, &config.env.balancer, &protocol)?;
            eval_rows.extend(report_records(config, &report, Some(done), None));
        }
    }
    let ckpt_path = run_dir.join("checkpoint.bin");
    state.to_checkpoint().save(&ckpt_path)?;
    if !eval_rows.is_empty() {
        let path = run_dir.join("eval.csv");
        fs::write(&path, metrics_csv(&eval_rows)).map_err(|e| io_err(&path, e))?;
    }
    Ok(stats)
}

fn report_records(
    config: &ExperimentConfig,
    report: &EvalReport,
    eval_iteration: Option<u64>,
    success_rate_drop: Option<f64>,
) -> Vec<MetricsRecord> {
    let run_id = match eval_iteration {
        Some(it) => format!("{}@{it}", config.run_id()),
        None => config.run_id(),
    };
    let mut rows: Vec<MetricsRecord> = report
        .per_velocity
        .iter()
        .map(|v| MetricsRecord {
            run_id: run_id.clone(),
            risk_mode: config.algo.risk_mode.as_str().into(),
            seed: config.run.seed,
            row_kind: "velocity".into(),
            target_velocity: Some(v.target_velocity),
            ood: v.ood,
            success_rate: v.success_rate,
            x_rmse: v.x_rmse,
            mean_return: v.mean_return,
            mean_cv: v.mean_cv,
            success_rate_drop: None,
        })
        .collect();
    rows.push(MetricsRecord {
        run_id,
        risk_mode: config.algo.risk_mode.as_str().into(),
        seed: config.run.seed,
        row_kind: "aggregate".into(),
        target_velocity: None,
        ood: false,
        success_rate: report.success_rate,
        x_rmse: report.x_rmse,
        mean_return: report.mean_return,
        mean_cv: report.mean_cv,
        success_rate_drop,
    });
    rows
}

fn load_checkpoint_for_eval(
    config: &ExperimentConfig,
    common: &ConfigArgs,
    checkpoint_path: &Path,
) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    if config.env.kind != EnvKind::Balancer {
        return Err(CliError::Usage(
            "eval/disturb protocols run on the balancer environment".into(),
        ));
    }
    // dimension compatibility against the (possibly overridden) config
    let probe = BalancerEnv::new(config.env.balancer.clone(), 0, 0).map_err(TrainError::from)?;
    if ckpt.actor.mean_net.input_dim() != probe.actor_obs_dim()
        || ckpt.critic.input_dim() != probe.privileged_obs_dim()
        || ckpt.actor.action_dim() != probe.action_dim()
    {
        return Err(CliError::Usage(format!(
            "checkpoint dimensions (actor {}, critic {}) do not match the config's environment (obs {}, privileged {}); pass the run's config.toml via --config{}",
            ckpt.actor.mean_net.input_dim(),
            ckpt.critic.input_dim(),
            probe.actor_obs_dim(),
            probe.privileged_obs_dim(),
            common
                .config
                .as_ref()
                .map(|_| "")
                .unwrap_or(" (none was given)"),
        )));
    }
    Ok(ckpt)
}

/// Locate the run config next to a checkpoint when --config is omitted.
fn config_args_for_checkpoint(common: &ConfigArgs, checkpoint: &Path) -> ConfigArgs {
    let mut args = common.clone();
    if args.config.is_none() {
        let sibling = checkpoint.parent().map(|d| d.join("config.toml"));
        if let Some(path) = sibling.filter(|p| p.is_file()) {
            args.config = Some(path);
        }
    }
    args
}

fn cmd_eval(
    common: &ConfigArgs,
    checkpoint_path: &Path,
    velocities: Option<&str>,
) -> Result<(), CliError> {
    let args = config_args_for_checkpoint(common, checkpoint_path);
    let (config, out_root) = load_config(&args)?;
    let ckpt = load_checkpoint_for_eval(&config, &args, checkpoint_path)?;

    let mut protocol = EvalProtocol::velocity_grid(config.run.seed);
    protocol.n_envs = config.run.eval_envs;
    protocol.episode_len = config.run.eval_episode_len;
    if let Some(list) = velocities {
        protocol.velocities = parse_f64_list(list)?;
    }
    let report = evaluate(&ckpt.actor, &ckpt.critic, &config.env.balancer, &protocol)?;
    let records = report_records(&config, &report, None, None);

    let out_dir = if args.out.is_some() || std::env::var_os("RISKADAPT_OUT").is_some() {
        out_root.join(format!("{}_eval", config.run_id()))
    } else {
        checkpoint_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval")
    };
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    crate::metrics::write_metrics(&out_dir, &records)?;
    println!(
        "eval: success_rate {:.3}, x_rmse {:.3} ({} velocities) -> {}",
        report.success_rate,
        report.x_rmse,
        report.per_velocity.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_disturb(common: &ConfigArgs, checkpoint_path: &Path) -> Result<(), CliError> {
    let args = config_args_for_checkpoint(common, checkpoint_path);
    let (config, out_root) = load_config(&args)?;
    let ckpt = load_checkpoint_for_eval(&config, &args, checkpoint_path)?;

    let schedule = DisturbanceSchedule {
        enabled: true,
        ..config.env.balancer.disturbance.clone()
    };
    let mut protocol = EvalProtocol::disturbance(config.run.seed, schedule);
    protocol.n_envs = config.run.eval_envs;
    protocol.episode_len = config.run.eval_episode_len;

    let pushed = evaluate(&ckpt.actor, &ckpt.critic, &config.env.balancer, &protocol)?;
    let mut baseline_protocol = protocol.clone();
    baseline_protocol.disturbance = None;
    baseline_protocol.record_cv_trace = false;
    let baseline = evaluate(
        &ckpt.actor,
        &ckpt.critic,
        &config.env.balancer,
        &baseline_protocol,
    )?;
    let drop = if baseline.success_rate > 0.0 {
        Some(1.0 - pushed.success_rate / baseline.success_rate)
    } else {
        None
    };
    let records = report_records(&config, &pushed, None, drop);

    let out_dir = if args.out.is_some() || std::env::var_os("RISKADAPT_OUT").is_some() {
        out_root.join(format!("{}_disturb", config.run_id()))
    } else {
        checkpoint_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("disturb")
    };
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    crate::metrics::write_metrics(&out_dir, &records)?;
    let trace = pushed.cv_trace.unwrap_or_default();
    let trace_path = out_dir.join("cvtrace.csv");
    fs::write(&trace_path, cvtrace_csv(&trace)).map_err(|e| io_err(&trace_path, e))?;
    println!(
        "disturb: success_rate {:.3} (baseline {:.3}, drop {}) -> {}",
        pushed.success_rate,
        baseline.success_rate,
        drop.map(|d| format!("{:.1}%", d * 100.0))
            .unwrap_or_else(|| "n/a".into()),
        out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(
    common: &ConfigArgs,
    modes: Option<&str>,
    seeds: Option<&str>,
) -> Result<(), CliError> {
    let modes: Vec<RiskMode> = match modes {
        Some(list) => list
            .split(',')
            .map(|s| {
                RiskMode::parse(s.trim())
                    .ok_or_else(|| CliError::Usage(format!("unknown risk mode `{s}`")))
            })
            .collect::<Result<_, _>>()?,
        None => RiskMode::ALL.to_vec(),
    };
    let seeds: Vec<u64> = match seeds {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::Usage(format!("bad seed `{s}`")))
            })
            .collect::<Result<_, _>>()?,
        None => vec![0, 1, 2],
    };

    let (_, out_root) = load_config(common)?;
    let sweep_dir = out_root.join("sweep");
    fs::create_dir_all(&sweep_dir).map_err(|e| io_err(&sweep_dir, e))?;

    let mut cells = Vec::new();
    let mut curves: Vec<(RiskMode, Vec<Vec<f64>>)> = Vec::new();
    for &mode in &modes {
        let mut mode_curves: Vec<Vec<f64>> = Vec::new();
        for &seed in &seeds {
            let mut args = common.clone();
            args.overrides
                .push(format!("algo.risk_mode={}", mode.as_str()));
            args.overrides.push(format!("run.seed={seed}"));
            args.seed = None;
            let cell = format!("{}_{}", mode.as_str(), seed);
            let result = load_config(&args).and_then(|(config, _)| {
                let run_dir = cmd_train(&config, &sweep_dir)?;
                let (header, rows) = read_csv_strict(&run_dir.join("stats.csv"))?;
                let reward_col = header
                    .iter()
                    .position(|h| h == "total_reward")
                    .ok_or_else(|| CliError::Usage("stats.csv missing total_reward".into()))?;
                Ok(rows
                    .iter()
                    .map(|r| r[reward_col].parse::<f64>().unwrap_or(f64::NAN))
                    .collect::<Vec<f64>>())
            });
            match result {
                Ok(curve) => {
                    mode_curves.push(curve);
                    cells.push(serde_json::json!({"cell": cell, "status": "ok"}));
                }
                Err(err) => {
                    eprintln!("sweep cell {cell} failed: {err}");
                    cells.push(serde_json::json!({
                        "cell": cell,
                        "status": "failed",
                        "error": err.to_string(),
                    }));
                }
            }
        }
        if !mode_curves.is_empty() {
            curves.push((mode, mode_curves));
        }
    }

    // tidy long-format aggregate: mean and standard error across seeds
    let mut out = String::from("risk_mode,seeds,iteration,mean_total_reward,stderr_total_reward\n");
    for (mode, mode_curves) in &curves {
        let n_iters = mode_curves.iter().map(|c| c.len()).min().unwrap_or(0);
        let n = mode_curves.len() as f64;
        for it in 0..n_iters {
            let values: Vec<f64> = mode_curves.iter().map(|c| c[it]).collect();
            let mean = values.iter().sum::<f64>() / n;
            let stderr = if values.len() > 1 {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            use std::fmt::Write as _;
            let _ = writeln!(
                out,
                "{},{},{it},{mean},{stderr}",
                mode.as_str(),
                mode_curves.len()
            );
        }
    }
    let agg_path = sweep_dir.join("sweep.csv");
    fs::write(&agg_path, out).map_err(|e| io_err(&agg_path, e))?;
    let summary_path = sweep_dir.join("sweep_summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&cells).expect("cells serialize") + "\n",
    )
    .map_err(|e| io_err(&summary_path, e))?;
    println!("sweep complete: {}", sweep_dir.display());
    Ok(())
}

fn cmd_plot(input: &Path, kind: &str, out: Option<PathBuf>) -> Result<(), CliError> {
    let (header, rows) = read_csv_strict(input)?;
    let svg = plot::render(kind, &header, &rows)?;
    let out_path = out.unwrap_or_else(|| input.with_extension("svg"));
    fs::write(&out_path, svg).map_err(|e| io_err(&out_path, e))?;
    println!("wrote {}", out_path.display());
    Ok(())
}

fn parse_f64_list(list: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad velocity `{s}`")))
        })
        .collect()
}
