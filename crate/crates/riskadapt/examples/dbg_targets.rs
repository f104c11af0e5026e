// debug scratch: do GAE targets show push-conditional dispersion?
use riskadapt::checkpoint::Checkpoint;
use riskadapt::config::resolve_config;
use riskadapt::env::BalancerEnv;
use riskadapt::ppo::{collect_rollouts, compute_gae, TrainState};

fn main() {
    let base = resolve_config(
        Some(std::path::Path::new("crates/riskadapt/configs/acceptance_balancer.toml")),
        &["env.disturbance.magnitudes=[6,9,12]".into()],
    )
    .unwrap();
    let ckpt = Checkpoint::load(std::path::Path::new(
        "/tmp/cal10/balancer_adaptive_seed0/checkpoint.bin",
    ))
    .unwrap();
    let mut algo = base.algo.clone();
    algo.rollout_length = 256; // longer pass for statistics
    let mut envs: Vec<BalancerEnv> = (0..algo.n_envs)
        .map(|e| BalancerEnv::new(base.env.balancer.clone(), 99, e as u64).unwrap())
        .collect();
    let mut state = TrainState::from_checkpoint(&algo, ckpt, 99).unwrap();
    let batch = collect_rollouts(&mut state, &mut envs, &algo).unwrap();
    let (_, targets) = compute_gae(&batch, algo.gamma, algo.gae_lambda);

    // bucket by |active_push| in the privileged obs (index 7)
    let mut buckets: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
    for (obs, &z) in batch.priv_obs.iter().zip(&targets) {
        let push = obs[7].abs().round() as i64;
        buckets.entry(push).or_default().push(z);
    }
    for (push, zs) in buckets {
        let n = zs.len() as f64;
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
        let crash_frac = batch
            .priv_obs
            .iter()
            .zip(&batch.dones)
            .zip(&batch.rewards)
            .filter(|((o, _), _)| o[7].abs().round() as i64 == push)
            .filter(|((_, &d), _)| d)
            .count() as f64
            / n;
        println!(
            "push {push:3}: n {:6} mean {mean:8.2} std {:7.2} rel {:.4} done_frac {crash_frac:.4}",
            zs.len(),
            var.sqrt(),
            var.sqrt() / mean
        );
    }
}
