// debug scratch: criterion-8 CV response on the trained adaptive policy
use riskadapt::checkpoint::Checkpoint;
use riskadapt::config::resolve_config;
use riskadapt::ppo::{evaluate, EvalProtocol};

fn main() {
    let base = resolve_config(
        Some(std::path::Path::new("crates/riskadapt/configs/acceptance_balancer.toml")),
        &[],
    )
    .unwrap();
    for seed in 0..1u64 {
        let path = format!("/tmp/cal4p/balancer_adaptive_seed{seed}/checkpoint.bin");
        let ckpt = Checkpoint::load(std::path::Path::new(&path)).unwrap();
        let mut schedule = base.env.balancer.disturbance.clone();
        schedule.magnitudes = std::env::args().nth(1).map(|s| {
            s.split(',').map(|x| x.parse().unwrap()).collect()
        }).unwrap_or(schedule.magnitudes);
        let protocol = EvalProtocol {
            velocities: vec![0.0],
            n_envs: 64,
            episode_len: 3000,
            disturbance: Some(schedule),
            seed: 4242,
            record_cv_trace: true,
        };
        let report = evaluate(&ckpt.actor, &ckpt.critic, &base.env.balancer, &protocol).unwrap();
        let trace = report.cv_trace.unwrap();
        let dt = trace.dt;
        let samples = &trace.samples;
        let mut onsets = Vec::new();
        for i in 1..samples.len() {
            if samples[i].push_active && !samples[i - 1].push_active {
                onsets.push(i);
            }
        }
        let window = (0.5 / dt).round() as usize;
        let pre_window = (1.0 / dt).round() as usize;
        let mut responsive = 0;
        let mut total = 0;
        for &onset in &onsets {
            if onset < pre_window || onset + window > samples.len() {
                continue;
            }
            let post: f64 = samples[onset..onset + window].iter().map(|s| s.mean_cv).sum::<f64>() / window as f64;
            let pre: f64 = samples[onset - pre_window..onset].iter().map(|s| s.mean_cv).sum::<f64>() / pre_window as f64;
            if total < 6 { print!("[{:.2}: {:.4}->{:.4}] ", samples[onset].t_seconds, pre, post); }
            if post > pre { responsive += 1; }
            total += 1;
        }
        println!("\nseed {seed}: {responsive}/{total} pushes responsive");
    }
}
