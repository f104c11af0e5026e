//! Deterministic evaluation protocols: velocity grids, success/RMSE
//! accounting, and CV traces under scheduled pushes.

use crate::env::{BalancerConfig, BalancerEnv, DisturbanceSchedule, Env};
use crate::metrics::{CvSample, CvTrace};
use crate::nn::{critic_forward, GaussianPolicy, Mlp};
use crate::risk::coefficient_of_variation;

use super::TrainError;

/// What to evaluate: target velocities, environment count per velocity,
/// episode length, the disturbance schedule (if any), and the eval seed.
#[derive(Debug, Clone)]
pub struct EvalProtocol {
    pub velocities: Vec<f64>,
    pub n_envs: usize,
    pub episode_len: u64,
    pub disturbance: Option<DisturbanceSchedule>,
    pub seed: u64,
    pub record_cv_trace: bool,
}

impl EvalProtocol {
    /// The paper-shaped grid: in-distribution speeds plus +-1.0 out of
    /// distribution, at desk-scale episode counts.
    pub fn velocity_grid(seed: u64) -> Self {
        Self {
            velocities: vec![-1.0, -0.8, -0.5, -0.2, 0.0, 0.2, 0.5, 0.8, 1.0],
            n_envs: 256,
            episode_len: 500,
            disturbance: None,
            seed,
            record_cv_trace: false,
        }
    }

    /// Zero-command evaluation under scheduled pushes with a CV trace.
    pub fn disturbance(seed: u64, schedule: DisturbanceSchedule) -> Self {
        Self {
            velocities: vec![0.0],
            n_envs: 64,
            episode_len: 500,
            disturbance: Some(schedule),
            seed,
            record_cv_trace: true,
        }
    }
}

/// Metrics for one target velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityEval {
    pub target_velocity: f64,
    pub ood: bool,
    pub success_rate: f64,
    pub x_rmse: f64,
    pub mean_return: f64,
    pub mean_cv: f64,
}

/// Per-velocity rows plus their aggregate (arithmetic mean over rows), and
/// the CV trace when requested.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_velocity: Vec<VelocityEval>,
    pub success_rate: f64,
    pub x_rmse: f64,
    pub mean_return: f64,
    pub mean_cv: f64,
    pub cv_trace: Option<CvTrace>,
}

/// Run mean-action rollouts of `actor` under the protocol. Success is
/// reaching the horizon without a crash; RMSE and CV aggregate over alive
/// steps of all environments.
pub fn evaluate(
    actor: &GaussianPolicy,
    critic: &Mlp,
    env_cfg: &BalancerConfig,
    protocol: &EvalProtocol,
) -> Result<EvalReport, TrainError> {
    let mut per_velocity = Vec::with_capacity(protocol.velocities.len());
    let mut cv_trace = None;
    let (cmd_lo, cmd_hi) = env_cfg.command_range;

    for (v_idx, &target) in protocol.velocities.iter().enumerate() {
        let cfg = BalancerConfig {
            command_range: (target, target),
            horizon: protocol.episode_len,
            disturbance: protocol
                .disturbance
                .clone()
                .unwrap_or_else(DisturbanceSchedule::disabled),
            ..env_cfg.clone()
        };
        let mut envs: Vec<BalancerEnv> = (0..protocol.n_envs)
            .map(|e| {
                BalancerEnv::new(
                    cfg.clone(),
                    protocol.seed,
                    (v_idx * protocol.n_envs + e) as u64,
                )
            })
            .collect::<Result<_, _>>()?;
        let mut alive = vec![true; protocol.n_envs];
        let mut crashed = vec![false; protocol.n_envs];
        let mut returns = vec![0.0f64; protocol.n_envs];
        let mut sq_err_sum = 0.0;
        let mut cv_sum = 0.0;
        let mut alive_samples = 0u64;
        let mut trace_samples = Vec::new();

        for t in 0..protocol.episode_len {
            let mut step_cv = 0.0;
            let mut step_dev = 0.0;
            let mut step_alive = 0u64;
            for (e, env) in envs.iter_mut().enumerate() {
                if !alive[e] {
                    continue;
                }
                let dist = critic_forward(critic, &env.privileged_obs())?;
                let cv = coefficient_of_variation(&dist);
                let dev = (env.state.v - env.command.vx_c).abs();
                cv_sum += cv;
                sq_err_sum += dev * dev;
                alive_samples += 1;
                step_cv += cv;
                step_dev += dev;
                step_alive += 1;

                let (mean_action, _) = actor.mean_net.forward(&env.actor_obs())?;
                let (breakdown, done, did_crash) = env.step_detailed(mean_action[0])?;
                returns[e] += breakdown.total;
                if done {
                    alive[e] = false;
                    crashed[e] = did_crash;
                }
            }
            if protocol.record_cv_trace {
                if step_alive == 0 {
                    break;
                }
                trace_samples.push(CvSample {
                    t_seconds: t as f64 * cfg.dt,
                    mean_cv: step_cv / step_alive as f64,
                    velocity_deviation: step_dev / step_alive as f64,
                    push_active: cfg.disturbance.force_at(t, cfg.dt) != 0.0,
                });
            } else if step_alive == 0 {
                break;
            }
        }

        let n = protocol.n_envs as f64;
        let successes = crashed.iter().filter(|&&c| !c).count() as f64;
        per_velocity.push(VelocityEval {
            target_velocity: target,
            ood: target < cmd_lo || target > cmd_hi,
            success_rate: successes / n,
            x_rmse: if alive_samples > 0 {
                (sq_err_sum / alive_samples as f64).sqrt()
            } else {
                0.0
            },
            mean_return: returns.iter().sum::<f64>() / n,
            mean_cv: if alive_samples > 0 {
                cv_sum / alive_samples as f64
            } else {
                0.0
            },
        });
        if protocol.record_cv_trace && cv_trace.is_none() {
            cv_trace = Some(CvTrace {
                dt: cfg.dt,
                samples: trace_samples,
            });
        }
    }

    let k = per_velocity.len() as f64;
    Ok(EvalReport {
        success_rate: per_velocity.iter().map(|r| r.success_rate).sum::<f64>() / k,
        x_rmse: per_velocity.iter().map(|r| r.x_rmse).sum::<f64>() / k,
        mean_return: per_velocity.iter().map(|r| r.mean_return).sum::<f64>() / k,
        mean_cv: per_velocity.iter().map(|r| r.mean_cv).sum::<f64>() / k,
        per_velocity,
        cv_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DisturbanceSchedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_protocol() -> EvalProtocol {
        EvalProtocol {
            velocities: vec![-0.5, 0.0, 0.5],
            n_envs: 4,
            episode_len: 50,
            disturbance: None,
            seed: 3,
            record_cv_trace: false,
        }
    }

    #[test]
    fn random_policy_yields_wellformed_report() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor = GaussianPolicy::new(5, 1, &[8], &mut rng);
        let critic = Mlp::new(&[8, 8, 8], 1.0, &mut rng);
        let report = evaluate(&actor, &critic, &BalancerConfig::default(), &tiny_protocol())
            .unwrap();
        assert_eq!(report.per_velocity.len(), 3);
        for row in &report.per_velocity {
            assert!((0.0..=1.0).contains(&row.success_rate));
            assert!(row.x_rmse >= 0.0);
        }
        let mean: f64 =
            report.per_velocity.iter().map(|r| r.success_rate).sum::<f64>() / 3.0;
        assert!((report.success_rate - mean).abs() < 1e-12);
    }

    #[test]
    fn ood_flags_follow_command_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = GaussianPolicy::new(5, 1, &[8], &mut rng);
        let critic = Mlp::new(&[8, 8, 8], 1.0, &mut rng);
        let mut protocol = tiny_protocol();
        protocol.velocities = vec![-1.0, -0.8, 0.0, 0.8, 1.0];
        let report =
            evaluate(&actor, &critic, &BalancerConfig::default(), &protocol).unwrap();
        let flags: Vec<bool> = report.per_velocity.iter().map(|r| r.ood).collect();
        assert_eq!(flags, vec![true, false, false, false, true]);
    }

    #[test]
    fn evaluation_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = GaussianPolicy::new(5, 1, &[8], &mut rng);
        let critic = Mlp::new(&[8, 8, 8], 1.0, &mut rng);
        let cfg = BalancerConfig::default();
        let a = evaluate(&actor, &critic, &cfg, &tiny_protocol()).unwrap();
        let b = evaluate(&actor, &critic, &cfg, &tiny_protocol()).unwrap();
        assert_eq!(a.success_rate.to_bits(), b.success_rate.to_bits());
        assert_eq!(a.x_rmse.to_bits(), b.x_rmse.to_bits());
        assert_eq!(a.mean_return.to_bits(), b.mean_return.to_bits());
    }

    #[test]
    fn disturbance_protocol_records_push_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = GaussianPolicy::new(5, 1, &[8], &mut rng);
        let critic = Mlp::new(&[8, 8, 8], 1.0, &mut rng);
        let mut protocol = EvalProtocol::disturbance(5, DisturbanceSchedule::default());
        protocol.n_envs = 4;
        protocol.episode_len = 150;
        let report =
            evaluate(&actor, &critic, &BalancerConfig::default(), &protocol).unwrap();
        let trace = report.cv_trace.unwrap();
        assert!(!trace.samples.is_empty());
        for s in &trace.samples {
            let in_window = s.t_seconds >= 2.0 - 1e-9 && s.t_seconds < 2.5 - 1e-9;
            if (0.0..3.0).contains(&s.t_seconds) {
                assert_eq!(s.push_active, in_window, "t = {}", s.t_seconds);
            }
        }

        // disabled schedule -> no push-flagged samples
        let mut quiet = protocol.clone();
        quiet.disturbance = None;
        let report2 =
            evaluate(&actor, &critic, &BalancerConfig::default(), &quiet).unwrap();
        assert!(report2
            .cv_trace
            .unwrap()
            .samples
            .iter()
            .all(|s| !s.push_active));
    }
}
