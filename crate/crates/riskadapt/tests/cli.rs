//! End-to-end tests of the command-line surface: run-directory contents,
//! determinism, checkpoint round trips, sweeps, plots, and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riskadapt"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("riskadapt_cli_{tag}"));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_train_args(out: &Path, seed: u64, extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = vec![
        "train".into(),
        "--out".into(),
        out.display().to_string(),
        "--seed".into(),
        seed.to_string(),
        "--override".into(),
        "algo.total_iterations=2".into(),
        "--override".into(),
        "algo.n_envs=4".into(),
        "--override".into(),
        "algo.rollout_length=8".into(),
        "--override".into(),
        "algo.n_quantiles=8".into(),
        "--override".into(),
        "algo.actor_hidden=[8]".into(),
        "--override".into(),
        "algo.critic_hidden=[8]".into(),
        "--override".into(),
        "algo.minibatch_size=32".into(),
        "--override".into(),
        "algo.update_epochs=2".into(),
        "--override".into(),
        "run.eval_envs=4".into(),
        "--override".into(),
        "run.eval_episode_len=60".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn train_smoke_writes_selfdescribing_run_dir() {
    let out = temp_dir("smoke");
    let status = bin()
        .args(tiny_train_args(&out, 0, &["--override", "algo.total_iterations=1"]))
        .status()
        .unwrap();
    assert!(status.success());
    let run_dir = out.join("balancer_adaptive_seed0");
    assert!(run_dir.join("config.toml").is_file());
    assert!(run_dir.join("meta.json").is_file());
    assert!(run_dir.join("checkpoint.bin").is_file());
    let stats = std::fs::read_to_string(run_dir.join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 2, "header plus one row");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["risk_mode"], "adaptive");
    assert!(meta["version"].as_str().unwrap().starts_with("riskadapt "));
    assert_eq!(meta["version_blob_sha1"].as_str().unwrap().len(), 40);
}

#[test]
fn same_seed_produces_byte_identical_stats() {
    let out_a = temp_dir("det_a");
    let out_b = temp_dir("det_b");
    for out in [&out_a, &out_b] {
        let status = bin().args(tiny_train_args(out, 5, &[])).status().unwrap();
        assert!(status.success());
    }
    let read = |out: &Path| std::fs::read(out.join("balancer_adaptive_seed5/stats.csv")).unwrap();
    assert_eq!(read(&out_a), read(&out_b));

    // different seed diverges
    let out_c = temp_dir("det_c");
    let status = bin().args(tiny_train_args(&out_c, 6, &[])).status().unwrap();
    assert!(status.success());
    assert_ne!(
        read(&out_a),
        std::fs::read(out_c.join("balancer_adaptive_seed6/stats.csv")).unwrap()
    );
}

#[test]
fn eval_reuses_run_config_and_is_reproducible() {
    let out = temp_dir("eval");
    assert!(bin().args(tiny_train_args(&out, 1, &[])).status().unwrap().success());
    let ckpt = out.join("balancer_adaptive_seed1/checkpoint.bin");

    let run_eval = || {
        let status = bin()
            .args([
                "eval",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--velocities",
                "-0.5,0.0,0.5",
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("balancer_adaptive_seed1/eval/metrics.csv")).unwrap()
    };
    let first = run_eval();
    let second = run_eval();
    assert_eq!(first, second, "re-running eval reproduces metrics bitwise");

    let text = String::from_utf8(first).unwrap();
    assert!(text.lines().count() == 1 + 3 + 1, "3 velocity rows + aggregate");
    assert!(text.contains("aggregate"));
}

#[test]
fn checkpoint_round_trip_reproduces_eval_metrics() {
    let out = temp_dir("roundtrip");
    assert!(bin().args(tiny_train_args(&out, 2, &[])).status().unwrap().success());
    let run_dir = out.join("balancer_adaptive_seed2");
    let ckpt = run_dir.join("checkpoint.bin");

    // copy the checkpoint elsewhere (fresh load path) and eval both
    let copy_dir = temp_dir("roundtrip_copy");
    let ckpt_copy = copy_dir.join("checkpoint.bin");
    std::fs::copy(&ckpt, &ckpt_copy).unwrap();
    std::fs::copy(run_dir.join("config.toml"), copy_dir.join("config.toml")).unwrap();

    for c in [&ckpt, &ckpt_copy] {
        let status = bin()
            .args(["eval", "--checkpoint", c.to_str().unwrap(), "--velocities", "0.0"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(run_dir.join("eval/metrics.csv")).unwrap();
    let b = std::fs::read(copy_dir.join("eval/metrics.csv")).unwrap();
    let strip_run_id = |bytes: &[u8]| {
        String::from_utf8(bytes.to_vec())
            .unwrap()
            .lines()
            .map(|l| l.splitn(2, ',').nth(1).unwrap_or("").to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip_run_id(&a), strip_run_id(&b));
}

#[test]
fn disturb_writes_cv_trace_with_push_windows() {
    let out = temp_dir("disturb");
    assert!(bin().args(tiny_train_args(&out, 3, &[])).status().unwrap().success());
    let ckpt = out.join("balancer_adaptive_seed3/checkpoint.bin");
    let status = bin()
        .args([
            "disturb",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--override",
            "run.eval_episode_len=150",
            // start exactly upright and pull the first push window early so
            // the barely-trained policy is still alive when it opens
            "--override",
            "env.reset_perturbation=0.0",
            "--override",
            "env.disturbance.interval_s=1.0",
            "--override",
            "env.disturbance.duration_s=0.25",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let dir = out.join("balancer_adaptive_seed3/disturb");
    let trace = std::fs::read_to_string(dir.join("cvtrace.csv")).unwrap();
    assert!(trace.starts_with("t_seconds,mean_cv,velocity_deviation,push_active"));
    // push windows at [2.0, 2.5) seconds
    let mut active_times = Vec::new();
    for line in trace.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[3] == "1" {
            active_times.push(fields[0].parse::<f64>().unwrap());
        }
    }
    assert!(!active_times.is_empty());
    assert!(active_times.iter().all(|&t| (1.0..1.25).contains(&t)));
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(metrics.contains("aggregate"));
}

#[test]
fn sweep_degenerate_cell_aggregates_like_train() {
    let out = temp_dir("sweep");
    let mut args: Vec<String> = vec![
        "sweep".into(),
        "--out".into(),
        out.display().to_string(),
        "--modes".into(),
        "fixed_neutral".into(),
        "--seeds".into(),
        "4".into(),
    ];
    args.extend(tiny_train_args(&out, 0, &[])[5..].iter().cloned()); // reuse overrides
    let status = bin().args(&args).status().unwrap();
    assert!(status.success());
    let sweep_csv =
        std::fs::read_to_string(out.join("sweep/sweep.csv")).unwrap();
    assert!(sweep_csv.starts_with("risk_mode,seeds,iteration,mean_total_reward,stderr_total_reward"));
    let rows: Vec<&str> = sweep_csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "two iterations aggregated");
    // single seed: stderr column is zero and mean equals the cell's stats
    let cell_stats =
        std::fs::read_to_string(out.join("sweep/balancer_fixed_neutral_seed4/stats.csv")).unwrap();
    let cell_reward: f64 = cell_stats
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let fields: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(fields[0], "fixed_neutral");
    assert_eq!(fields[3].parse::<f64>().unwrap(), cell_reward);
    assert_eq!(fields[4].parse::<f64>().unwrap(), 0.0);
    let summary =
        std::fs::read_to_string(out.join("sweep/sweep_summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"ok\""));
}

#[test]
fn plot_outputs_are_deterministic_and_strict() {
    let dir = temp_dir("plot");
    let csv = dir.join("trace.csv");
    std::fs::write(
        &csv,
        "t_seconds,mean_cv,velocity_deviation,push_active\n0,0.1,0.0,0\n0.02,0.2,0.1,1\n0.04,0.12,0.05,0\n",
    )
    .unwrap();
    let svg_path = dir.join("trace.svg");
    for _ in 0..2 {
        let status = bin()
            .args([
                "plot",
                "--input",
                csv.to_str().unwrap(),
                "--kind",
                "cv-trace",
                "--out",
                svg_path.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    let again = std::fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg, again);

    // ragged CSV -> exit 2, message names the row
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "a,b\n1\n").unwrap();
    let output = bin()
        .args(["plot", "--input", bad.to_str().unwrap(), "--kind", "cv-trace"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("row 2"));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let out = temp_dir("badcfg");
    let output = bin()
        .args([
            "train",
            "--out",
            out.to_str().unwrap(),
            "--override",
            "algo.gamma=2.0",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("gamma"));

    let output = bin()
        .args([
            "train",
            "--out",
            out.to_str().unwrap(),
            "--override",
            "algo.no_such_key=1",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("no_such_key"));
}

#[test]
fn risky_choice_env_trains_via_cli() {
    let out = temp_dir("risky");
    let status = bin()
        .args(tiny_train_args(
            &out,
            0,
            &[
                "--override",
                "env.kind=risky_choice",
                "--override",
                "algo.risk_mode=fixed_averse",
                "--override",
                "algo.normalize_advantages=false",
            ],
        ))
        .status()
        .unwrap();
    assert!(status.success());
    let stats =
        std::fs::read_to_string(out.join("risky_choice_fixed_averse_seed0/stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 3);
}

#[test]
fn checkpoint_dimension_mismatch_is_usage_error() {
    let out = temp_dir("dim");
    assert!(bin().args(tiny_train_args(&out, 0, &[])).status().unwrap().success());
    let ckpt = out.join("balancer_adaptive_seed0/checkpoint.bin");
    // a config with a risky_choice env cannot evaluate a balancer checkpoint
    let output = bin()
        .args([
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--config",
            "/nonexistent/config.toml",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}
