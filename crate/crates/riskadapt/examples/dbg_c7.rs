// debug scratch: criterion-7 protocol over the calibration checkpoints
use riskadapt::checkpoint::Checkpoint;
use riskadapt::config::resolve_config;
use riskadapt::ppo::{evaluate, EvalProtocol};

fn main() {
    let base = resolve_config(
        Some(std::path::Path::new("crates/riskadapt/configs/acceptance_balancer.toml")),
        &[],
    )
    .unwrap();
    for mode in ["adaptive", "fixed_neutral", "fixed_seeking"] {
        let mut mean = 0.0;
        for seed in 0..3u64 {
            let path = format!("/tmp/cal4/balancer_{mode}_seed{seed}/checkpoint.bin");
            let ckpt = Checkpoint::load(std::path::Path::new(&path)).unwrap();
            let mut stress = base.env.balancer.disturbance.clone();
            stress.magnitudes = std::env::args().nth(1).map(|s| {
                s.split(',').map(|x| x.parse().unwrap()).collect()
            }).unwrap_or(stress.magnitudes);
            let protocol = EvalProtocol {
                velocities: vec![-1.0, -0.8, -0.5, -0.2, 0.0, 0.2, 0.5, 0.8, 1.0],
                n_envs: 64,
                episode_len: 500,
                disturbance: Some(stress),
                seed: 1000 + seed,
                record_cv_trace: false,
            };
            let report = evaluate(&ckpt.actor, &ckpt.critic, &base.env.balancer, &protocol).unwrap();
            println!("{mode:14} s{seed} success {:.4} rmse {:.3}", report.success_rate, report.x_rmse);
            mean += report.success_rate;
        }
        println!("{mode:14} MEAN {:.4}", mean / 3.0);
    }
}
