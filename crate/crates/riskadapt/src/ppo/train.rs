//! Rollout collection, GAE, and the actor/critic/risk updates.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{step_all, Env};
use crate::nn::{adam_step, critic_forward, gaussian_log_prob, Mlp, MlpGradients};
use crate::risk::{
    adaptive_alpha, coefficient_of_variation, distorted_value, quantile_loss_sorted,
    DistortionMeasure, QuantileDistribution,
};

use super::{IterationStats, PpoConfig, RiskMode, RolloutBatch, TrainError, TrainState};

/// Roll the policy forward `rollout_length` steps across all environments,
/// storing actions, log densities, rewards, and the critic's quantile
/// predictions with their distorted values under the current measure.
pub fn collect_rollouts<E: Env>(
    state: &mut TrainState,
    envs: &mut [E],
    cfg: &PpoConfig,
) -> Result<RolloutBatch, TrainError> {
    let n_envs = envs.len();
    if n_envs != cfg.n_envs {
        return Err(TrainError::Config(format!(
            "algo.n_envs: config says {}, got {} environments",
            cfg.n_envs, n_envs
        )));
    }
    let steps = cfg.rollout_length;
    let total = steps * n_envs;
    let action_dim = envs[0].action_dim();
    let measure = state.current_measure(cfg)?;

    let mut batch = RolloutBatch {
        n_envs,
        rollout_length: steps,
        actor_obs: Vec::with_capacity(total),
        priv_obs: Vec::with_capacity(total),
        actions: Vec::with_capacity(total),
        log_probs: Vec::with_capacity(total),
        rewards: Vec::with_capacity(total),
        tracking_rewards: Vec::with_capacity(total),
        dones: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        quantiles: Vec::with_capacity(total),
        bootstrap_values: Vec::with_capacity(n_envs),
        alpha: state.alpha,
    };

    for _ in 0..steps {
        let mut actions_t: Vec<Vec<f64>> = Vec::with_capacity(n_envs);
        for (e, env) in envs.iter().enumerate() {
            let obs = env.actor_obs();
            let pobs = env.privileged_obs();
            if obs.iter().chain(pobs.iter()).any(|x| !x.is_finite()) {
                return Err(TrainError::NonFinite {
                    what: "observation",
                    iteration: state.iteration,
                });
            }
            let dist = critic_forward(&state.critic, &pobs)?;
            let value = distorted_value(&dist, &measure);
            let noise: Vec<f64> = (0..action_dim)
                .map(|_| state.noise_rngs[e].sample(StandardNormal))
                .collect();
            let (action, log_prob) = state.actor.sample_action(&obs, &noise)?;
            if action.iter().any(|x| !x.is_finite()) || !log_prob.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "action",
                    iteration: state.iteration,
                });
            }
            batch.actor_obs.push(obs);
            batch.priv_obs.push(pobs);
            batch.log_probs.push(log_prob);
            batch.values.push(value);
            batch.quantiles.push(dist.values().to_vec());
            actions_t.push(action.clone());
            batch.actions.push(action);
        }
        let outcomes = step_all(envs, &actions_t)?;
        for outcome in outcomes {
            batch.rewards.push(outcome.reward);
            batch.tracking_rewards.push(outcome.tracking_reward);
            batch.dones.push(outcome.done);
        }
    }

    for env in envs.iter() {
        let dist = critic_forward(&state.critic, &env.privileged_obs())?;
        batch.bootstrap_values.push(distorted_value(&dist, &measure));
    }
    Ok(batch)
}

/// Standard recursive GAE over the batch's stored values. Returns raw
/// (unnormalized) advantages and the value targets A + V.
pub fn compute_gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let (n_envs, steps) = (batch.n_envs, batch.rollout_length);
    let mut advantages = vec![0.0; batch.len()];
    for e in 0..n_envs {
        let mut gae = 0.0;
        for t in (0..steps).rev() {
            let i = t * n_envs + e;
            let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
            let next_value = if t + 1 == steps {
                batch.bootstrap_values[e]
            } else {
                batch.values[i + n_envs]
            };
            let delta = batch.rewards[i] + gamma * next_value * not_done - batch.values[i];
            gae = delta + gamma * lambda * not_done * gae;
            advantages[i] = gae;
        }
    }
    let targets: Vec<f64> = advantages
        .iter()
        .zip(&batch.values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, targets)
}

/// Distortion-density weight g'(tau) of a return sample landing at quantile
/// position tau of the state's predicted distribution. For Wang,
/// g'(tau) = exp(-alpha * Phi^-1(tau) - alpha^2 / 2): an averse level
/// up-weights low-quantile (disappointing) returns, a seeking level
/// up-weights high-quantile ones, and alpha = 0 gives exactly 1.
pub fn distortion_density(measure: &DistortionMeasure, tau: f64) -> f64 {
    match *measure {
        DistortionMeasure::Neutral => 1.0,
        DistortionMeasure::Wang { alpha } => {
            if alpha == 0.0 {
                1.0
            } else {
                (-alpha * crate::risk::normal_inv_cdf(tau) - alpha * alpha / 2.0).exp()
            }
        }
        DistortionMeasure::Cvar { beta } => {
            if tau < beta {
                1.0 / beta
            } else {
                0.0
            }
        }
    }
}

/// Reweight advantages by the distortion density at each sample's return
/// quantile, so the risk preference acts on actions, not only on baselines.
/// The quantile position of the GAE target is estimated against the stored
/// predictions and clamped to the midpoint band [1/(2N), 1 - 1/(2N)].
pub fn risk_weighted_advantages(
    batch: &RolloutBatch,
    advantages: &[f64],
    targets: &[f64],
    measure: &DistortionMeasure,
) -> Vec<f64> {
    if matches!(measure, DistortionMeasure::Neutral)
        || matches!(measure, DistortionMeasure::Wang { alpha } if *alpha == 0.0)
    {
        return advantages.to_vec();
    }
    advantages
        .iter()
        .zip(targets)
        .zip(&batch.quantiles)
        .map(|((&adv, &z), atoms)| {
            let n = atoms.len() as f64;
            let below = atoms.iter().filter(|&&a| a < z).count() as f64;
            let ties = atoms.iter().filter(|&&a| a == z).count() as f64;
            let tau = ((below + 0.5 * ties) / n).clamp(0.5 / n, 1.0 - 0.5 / n);
            adv * distortion_density(measure, tau)
        })
        .collect()
}

/// Shift to zero mean and scale to unit standard deviation.
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
}

/// Clipped-surrogate policy update with an entropy bonus, minibatched over
/// multiple epochs.
pub fn actor_update(
    state: &mut TrainState,
    batch: &RolloutBatch,
    advantages: &[f64],
    cfg: &PpoConfig,
) -> Result<ActorStats, TrainError> {
    let n = batch.len();
    let eps = cfg.clip_eps;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut ratio_sum = 0.0;
    let mut clip_count = 0usize;
    let mut samples = 0usize;

    for _ in 0..cfg.update_epochs {
        indices.shuffle(&mut state.update_rng);
        for chunk in indices.chunks(cfg.minibatch_size) {
            let b = chunk.len() as f64;
            let mut grads = MlpGradients::zeros_like(&state.actor.mean_net);
            let mut log_std_grad = vec![0.0; state.actor.action_dim()];
            for &i in chunk {
                let (mean, cache) = state.actor.mean_net.forward(&batch.actor_obs[i])?;
                let action = &batch.actions[i];
                let log_prob = gaussian_log_prob(&mean, &state.actor.log_std, action);
                let ratio = (log_prob - batch.log_probs[i]).exp();
                if !ratio.is_finite() {
                    return Err(TrainError::NonFinite {
                        what: "policy ratio",
                        iteration: state.iteration,
                    });
                }
                let adv = advantages[i];
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                // min(unclipped, clipped): gradient flows only through the
                // unclipped branch, and only when it is the active one
                let d_surr_d_logp = if unclipped <= clipped { unclipped } else { 0.0 };
                let coef = -d_surr_d_logp / b;
                if coef != 0.0 {
                    let mut out_grad = vec![0.0; mean.len()];
                    for j in 0..mean.len() {
                        let sigma = state.actor.log_std[j].exp();
                        let z = (action[j] - mean[j]) / sigma;
                        out_grad[j] = coef * z / sigma;
                        log_std_grad[j] += coef * (z * z - 1.0);
                    }
                    let (g, _) = state.actor.mean_net.backward(&cache, &out_grad)?;
                    grads.add(&g);
                }
                ratio_sum += ratio;
                if (ratio - 1.0).abs() > eps {
                    clip_count += 1;
                }
                samples += 1;
            }
            // entropy bonus: d(-coeff * H)/d(log_std_j) = -coeff
            for g in &mut log_std_grad {
                *g -= cfg.entropy_coeff;
            }
            let mut grad_groups = Mlp::grad_groups(&grads);
            grad_groups.push(&log_std_grad);
            let mut params = state.actor.mean_net.param_groups_mut();
            params.push(state.actor.log_std.as_mut_slice());
            adam_step(&mut params, &grad_groups, &mut state.actor_opt)?;
            state.actor.clamp_log_std();
        }
    }

    Ok(ActorStats {
        mean_ratio: ratio_sum / samples as f64,
        clip_fraction: clip_count as f64 / samples as f64,
        entropy: state.actor.entropy(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStats {
    pub mean_quantile_loss: f64,
}

/// Quantile-regression update: every state's N raw atoms regress toward the
/// scalar GAE target through the sort projection.
pub fn critic_update(
    state: &mut TrainState,
    batch: &RolloutBatch,
    targets: &[f64],
    cfg: &PpoConfig,
) -> Result<CriticStats, TrainError> {
    let n = batch.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut loss_sum = 0.0;
    let mut samples = 0usize;

    for _ in 0..cfg.update_epochs {
        indices.shuffle(&mut state.update_rng);
        for chunk in indices.chunks(cfg.minibatch_size) {
            let b = chunk.len() as f64;
            let mut grads = MlpGradients::zeros_like(&state.critic);
            for &i in chunk {
                let target = targets[i];
                if !target.is_finite() {
                    return Err(TrainError::NonFinite {
                        what: "value target",
                        iteration: state.iteration,
                    });
                }
                let (raw, cache) = state.critic.forward(&batch.priv_obs[i])?;
                let mut perm: Vec<usize> = (0..raw.len()).collect();
                perm.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
                let sorted: Vec<f64> = perm.iter().map(|&j| raw[j]).collect();
                let (loss, grad_sorted) = quantile_loss_sorted(&sorted, target);
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        what: "quantile loss",
                        iteration: state.iteration,
                    });
                }
                // scatter the sorted-atom gradients back to raw outputs
                let mut out_grad = vec![0.0; raw.len()];
                for (pos, &j) in perm.iter().enumerate() {
                    out_grad[j] = grad_sorted[pos] / b;
                }
                let (g, _) = state.critic.backward(&cache, &out_grad)?;
                grads.add(&g);
                loss_sum += loss;
                samples += 1;
            }
            let grad_groups = Mlp::grad_groups(&grads);
            let mut params = state.critic.param_groups_mut();
            adam_step(&mut params, &grad_groups, &mut state.critic_opt)?;
        }
    }

    Ok(CriticStats {
        mean_quantile_loss: loss_sum / samples as f64,
    })
}

/// Update the risk level from the freshly collected batch. In adaptive mode
/// the batch-mean coefficient of variation gates the schedule; the new level
/// governs the next collection pass.
pub fn update_risk(
    state: &mut TrainState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
) -> Result<f64, TrainError> {
    let mut cv_sum = 0.0;
    for q in &batch.quantiles {
        let dist = QuantileDistribution::new(q.clone())?;
        cv_sum += coefficient_of_variation(&dist);
    }
    state.last_batch_cv = cv_sum / batch.quantiles.len() as f64;

    state.alpha = match cfg.risk_mode {
        RiskMode::Adaptive => {
            adaptive_alpha(state.iteration + 1, &cfg.schedule(), state.last_batch_cv)
        }
        RiskMode::ScalarPpo => 0.0,
        _ => cfg.resolved_fixed_alpha(),
    };
    Ok(state.alpha)
}

/// One full iteration: collect with the current risk level, update the risk
/// level from the batch, then run GAE and both network updates.
pub fn train_iteration<E: Env>(
    state: &mut TrainState,
    envs: &mut [E],
    cfg: &PpoConfig,
) -> Result<IterationStats, TrainError> {
    let entropy_at_collection = state.actor.entropy();
    let batch = collect_rollouts(state, envs, cfg)?;
    update_risk(state, &batch, cfg)?;
    let (raw_advantages, targets) = compute_gae(&batch, cfg.gamma, cfg.gae_lambda);
    let measure = cfg.measure_for(batch.alpha)?;
    let weighted = risk_weighted_advantages(&batch, &raw_advantages, &targets, &measure);
    let advantages = if cfg.normalize_advantages {
        normalize_advantages(&weighted)
    } else {
        weighted
    };
    let actor_stats = actor_update(state, &batch, &advantages, cfg)?;
    let critic_stats = critic_update(state, &batch, &targets, cfg)?;

    let n = batch.len() as f64;
    let stats = IterationStats {
        iteration: state.iteration,
        total_reward: batch.rewards.iter().sum::<f64>() / n,
        tracking_reward: batch.tracking_rewards.iter().sum::<f64>() / n,
        entropy: entropy_at_collection,
        alpha: batch.alpha,
        batch_cv: state.last_batch_cv,
        clip_fraction: actor_stats.clip_fraction,
        critic_loss: critic_stats.mean_quantile_loss,
    };
    state.iteration += 1;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BalancerConfig, BalancerEnv, DisturbanceSchedule, RiskyChoiceEnv};
    use crate::risk::DistortionMeasure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> PpoConfig {
        PpoConfig {
            n_envs: 4,
            rollout_length: 8,
            n_quantiles: 8,
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            minibatch_size: 16,
            update_epochs: 2,
            total_iterations: 10,
            ..PpoConfig::default()
        }
    }

    fn make_envs(cfg: &PpoConfig, seed: u64) -> Vec<BalancerEnv> {
        let env_cfg = BalancerConfig {
            disturbance: DisturbanceSchedule::disabled(),
            ..BalancerConfig::default()
        };
        (0..cfg.n_envs)
            .map(|e| BalancerEnv::new(env_cfg.clone(), seed, e as u64).unwrap())
            .collect()
    }

    #[test]
    fn single_transition_batch() {
        let cfg = PpoConfig {
            n_envs: 1,
            rollout_length: 1,
            ..small_cfg()
        };
        let mut envs = make_envs(&cfg, 0);
        let mut state = TrainState::new(&cfg, 5, 8, 1, 0).unwrap();
        let batch = collect_rollouts(&mut state, &mut envs, &cfg).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.bootstrap_values.len(), 1);
    }

    #[test]
    fn collection_is_deterministic() {
        let cfg = small_cfg();
        let run = || {
            let mut envs = make_envs(&cfg, 3);
            let mut state = TrainState::new(&cfg, 5, 8, 1, 3).unwrap();
            let batch = collect_rollouts(&mut state, &mut envs, &cfg).unwrap();
            let mut checksum = 0.0;
            for i in 0..batch.len() {
                checksum += batch.rewards[i] + batch.log_probs[i] + batch.values[i];
            }
            checksum
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn stored_values_recompute_exactly() {
        let cfg = small_cfg();
        let mut envs = make_envs(&cfg, 5);
        let mut state = TrainState::new(&cfg, 5, 8, 1, 5).unwrap();
        let batch = collect_rollouts(&mut state, &mut envs, &cfg).unwrap();
        let measure = cfg.measure_for(batch.alpha).unwrap();
        for i in 0..batch.len() {
            let dist = critic_forward(&state.critic, &batch.priv_obs[i]).unwrap();
            let recomputed = distorted_value(&dist, &measure);
            assert_eq!(recomputed.to_bits(), batch.values[i].to_bits(), "row {i}");
            assert_eq!(dist.values(), batch.quantiles[i].as_slice());
        }
    }

    fn synthetic_batch(rng: &mut ChaCha8Rng, n_envs: usize, steps: usize) -> RolloutBatch {
        let total = n_envs * steps;
        RolloutBatch {
            n_envs,
            rollout_length: steps,
            actor_obs: vec![vec![0.0]; total],
            priv_obs: vec![vec![0.0]; total],
            actions: vec![vec![0.0]; total],
            log_probs: vec![0.0; total],
            rewards: (0..total).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            tracking_rewards: vec![0.0; total],
            dones: (0..total).map(|_| rng.gen_bool(0.15)).collect(),
            values: (0..total).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            quantiles: vec![vec![0.0]; total],
            bootstrap_values: (0..n_envs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            alpha: 0.0,
        }
    }

    /// Expanded-sum GAE oracle: A_t = sum_l (gamma lambda)^l delta_{t+l},
    /// truncated after the first done.
    fn brute_force_gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Vec<f64> {
        let (n_envs, steps) = (batch.n_envs, batch.rollout_length);
        let mut advantages = vec![0.0; batch.len()];
        for e in 0..n_envs {
            for t in 0..steps {
                let mut acc = 0.0;
                let mut factor = 1.0;
                for l in t..steps {
                    let i = l * n_envs + e;
                    let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
                    let next_value = if l + 1 == steps {
                        batch.bootstrap_values[e]
                    } else {
                        batch.values[i + n_envs]
                    };
                    let delta =
                        batch.rewards[i] + gamma * next_value * not_done - batch.values[i];
                    acc += factor * delta;
                    if batch.dones[i] {
                        break;
                    }
                    factor *= gamma * lambda;
                }
                advantages[t * n_envs + e] = acc;
            }
        }
        advantages
    }

    #[test]
    fn gae_terminal_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut batch = synthetic_batch(&mut rng, 1, 1);
        batch.rewards = vec![1.0];
        batch.values = vec![0.0];
        batch.dones = vec![true];
        batch.bootstrap_values = vec![123.0]; // masked by done
        let (adv, targets) = compute_gae(&batch, 0.99, 0.95);
        assert_eq!(adv, vec![1.0]);
        assert_eq!(targets, vec![1.0]);
    }

    #[test]
    fn gae_lambda_zero_is_td0() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = synthetic_batch(&mut rng, 2, 6);
        let (adv, _) = compute_gae(&batch, 0.9, 0.0);
        for e in 0..2 {
            for t in 0..6 {
                let i = t * 2 + e;
                let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
                let next_value = if t == 5 {
                    batch.bootstrap_values[e]
                } else {
                    batch.values[i + 2]
                };
                let delta = batch.rewards[i] + 0.9 * next_value * not_done - batch.values[i];
                assert!((adv[i] - delta).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gae_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let batch = synthetic_batch(&mut rng, 3, 10);
            let (recursive, _) = compute_gae(&batch, 0.99, 0.95);
            let expanded = brute_force_gae(&batch, 0.99, 0.95);
            for (a, b) in recursive.iter().zip(&expanded) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalized_advantages_have_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let advs: Vec<f64> = (0..500).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let normed = normalize_advantages(&advs);
        let mean = normed.iter().sum::<f64>() / normed.len() as f64;
        let var = normed.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / normed.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn clip_objective_scalar_case() {
        // eta = 1.5, eps = 0.2, adv = 1 -> min(1.5, 1.2) = 1.2
        let (ratio, eps, adv) = (1.5f64, 0.2, 1.0);
        let surr = (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv);
        assert_eq!(surr, 1.2);
    }

    #[test]
    fn ratio_is_one_and_gradient_vanilla_before_any_step() {
        let cfg = PpoConfig {
            actor_lr: 0.0,
            entropy_coeff: 0.0,
            update_epochs: 1,
            ..small_cfg()
        };
        let mut envs = make_envs(&cfg, 7);
        let mut state = TrainState::new(&cfg, 5, 8, 1, 7).unwrap();
        let batch = collect_rollouts(&mut state, &mut envs, &cfg).unwrap();
        let (raw, _) = compute_gae(&batch, cfg.gamma, cfg.gae_lambda);
        let advs = normalize_advantages(&raw);
        let stats = actor_update(&mut state, &batch, &advs, &cfg).unwrap();
        assert!((stats.mean_ratio - 1.0).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);
    }

    #[test]
    fn zero_advantages_leave_only_entropy_gradient() {
        let cfg = PpoConfig {
            entropy_coeff: 0.01,
            update_epochs: 1,
            minibatch_size: 1024,
            ..small_cfg()
        };
        let mut envs = make_envs(&cfg, 9);
        let mut state = TrainState::new(&cfg, 5, 8, 1, 9).unwrap();
        let batch = collect_rollouts(&mut state, &mut envs, &cfg).unwrap();
        let mean_before = state.actor.mean_net.clone();
        let log_std_before = state.actor.log_std.clone();
        let advs = vec![0.0; batch.len()];
        actor_update(&mut state, &batch, &advs, &cfg).unwrap();
        // mean net untouched (zero surrogate gradient), log_std pushed up
        assert_eq!(state.actor.mean_net, mean_before);
        assert!(state
            .actor
            .log_std
            .iter()
            .zip(&log_std_before)
            .all(|(a, b)| a > b));
    }

    #[test]
    fn critic_zero_loss_on_exact_predictions() {
        let target = 0.7;
        let sorted = vec![target; 8];
        let (loss, grad) = quantile_loss_sorted(&sorted, target);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn critic_converges_to_point_mass_target() {
        let cfg = PpoConfig {
            n_envs: 1,
            rollout_length: 1,
            n_quantiles: 8,
            critic_hidden: vec![8],
            update_epochs: 1,
            minibatch_size: 1,
            ..PpoConfig::default()
        };
        let state = &mut TrainState::new(&cfg, 5, 8, 1, 13).unwrap();
        let obs = vec![0.3, -0.2, 0.1, 0.0, 0.5, 0.1, 1.0, 0.0];
        let target = 2.5;
        let batch = RolloutBatch {
            n_envs: 1,
            rollout_length: 1,
            actor_obs: vec![vec![0.0; 5]],
            priv_obs: vec![obs.clone()],
            actions: vec![vec![0.0]],
            log_probs: vec![0.0],
            rewards: vec![0.0],
            tracking_rewards: vec![0.0],
            dones: vec![true],
            values: vec![0.0],
            quantiles: vec![vec![0.0; 8]],
            bootstrap_values: vec![0.0],
            alpha: 0.0,
        };
        // decay the step size so the atoms settle inside the tolerance
        // instead of limit-cycling around the pinball kink
        for it in 0..500 {
            let frac = 1.0 - it as f64 / 500.0;
            state.critic_opt.lr = 0.06 * frac * frac + 0.0003;
            critic_update(state, &batch, &[target], &cfg).unwrap();
        }
        let dist = critic_forward(&state.critic, &obs).unwrap();
        for &atom in dist.values() {
            assert!((atom - target).abs() < 0.01, "atom {atom}");
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences_end_to_end() {
        // tiny critic: 2 -> 3 atoms, gradient through sort + pinball loss
        let cfg = PpoConfig {
            n_quantiles: 3,
            critic_hidden: vec![2],
            ..small_cfg()
        };
        let state = TrainState::new(&cfg, 5, 2, 1, 17).unwrap();
        let obs = vec![0.4, -0.7];
        let target = 0.3;
        let h = 1e-5;

        let loss_of = |critic: &Mlp| -> f64 {
            let (raw, _) = critic.forward(&obs).unwrap();
            let mut sorted = raw.clone();
            sorted.sort_by(f64::total_cmp);
            quantile_loss_sorted(&sorted, target).0
        };

        let (raw, cache) = state.critic.forward(&obs).unwrap();
        let mut perm: Vec<usize> = (0..raw.len()).collect();
        perm.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
        let sorted: Vec<f64> = perm.iter().map(|&j| raw[j]).collect();
        // keep away from kinks and ties
        assert!(sorted.windows(2).all(|w| (w[1] - w[0]).abs() > 1e-3));
        assert!(sorted.iter().all(|&s| (s - target).abs() > 1e-3));
        let (_, grad_sorted) = quantile_loss_sorted(&sorted, target);
        let mut out_grad = vec![0.0; raw.len()];
        for (pos, &j) in perm.iter().enumerate() {
            out_grad[j] = grad_sorted[pos];
        }
        let (grads, _) = state.critic.backward(&cache, &out_grad).unwrap();

        for l in 0..state.critic.n_layers() {
            for idx in 0..state.critic.weights()[l].len() {
                let mut plus = state.critic.clone();
                let mut minus = state.critic.clone();
                {
                    let mut groups = plus.param_groups_mut();
                    groups[2 * l][idx] += h;
                }
                {
                    let mut groups = minus.param_groups_mut();
                    groups[2 * l][idx] -= h;
                }
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let got = grads.d_weights[l][idx];
                let denom = fd.abs().max(1e-8);
                assert!(
                    ((got - fd) / denom).abs() < 1e-4,
                    "layer {l} idx {idx}: {got} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn distortion_density_identity_and_tilt() {
        // exactly 1 at the neutral level, bitwise
        assert_eq!(distortion_density(&DistortionMeasure::Neutral, 0.3), 1.0);
        assert_eq!(
            distortion_density(&DistortionMeasure::wang(0.0).unwrap(), 0.3),
            1.0
        );
        // averse tilts toward low quantiles, seeking toward high ones
        let averse = DistortionMeasure::wang(0.5).unwrap();
        assert!(distortion_density(&averse, 0.1) > 1.0);
        assert!(distortion_density(&averse, 0.9) < 1.0);
        let seeking = DistortionMeasure::wang(-0.5).unwrap();
        assert!(distortion_density(&seeking, 0.1) < 1.0);
        assert!(distortion_density(&seeking, 0.9) > 1.0);
        // the density integrates to ~1 over tau (it is a change of measure)
        for measure in [averse, seeking] {
            let steps = 20_000;
            let integral: f64 = (0..steps)
                .map(|k| distortion_density(&measure, (k as f64 + 0.5) / steps as f64))
                .sum::<f64>()
                / steps as f64;
            assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
        }
    }

    #[test]
    fn risk_weighting_flips_the_risky_arm_aggregate() {
        // bandit-shaped batch: mixture atoms of a half-risky policy
        let atoms = vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.5, 2.5];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut batch = synthetic_batch(&mut rng, 1, 4);
        batch.quantiles = vec![atoms; 4];
        // rows: safe(1.0), risky-low(0.0), risky-high(2.5), safe(1.0)
        let targets = [1.0, 0.0, 2.5, 1.0];
        let v_alpha = 0.77;
        let advantages: Vec<f64> = targets.iter().map(|z| z - v_alpha).collect();
        let averse = DistortionMeasure::wang(0.5).unwrap();
        let weighted = risk_weighted_advantages(&batch, &advantages, &targets, &averse);
        // risky aggregate flips negative under the averse tilt
        let risky_sum = weighted[1] + weighted[2];
        assert!(risky_sum < 0.0, "weighted risky aggregate {risky_sum}");
        assert!(weighted[0] > 0.0 && weighted[3] > 0.0);
        // neutral weighting is the identity
        let neutral = risk_weighted_advantages(
            &batch,
            &advantages,
            &targets,
            &DistortionMeasure::Neutral,
        );
        assert_eq!(neutral, advantages);
    }

    #[test]
    fn update_risk_fixed_and_adaptive_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut batch = synthetic_batch(&mut rng, 2, 4);
        batch.quantiles = vec![vec![1.0, 2.0, 3.0]; 8];

        let averse = PpoConfig {
            risk_mode: RiskMode::FixedAverse,
            ..small_cfg()
        };
        let mut state = TrainState::new(&averse, 5, 8, 1, 0).unwrap();
        for _ in 0..3 {
            let alpha = update_risk(&mut state, &batch, &averse).unwrap();
            assert_eq!(alpha, 0.2);
            state.iteration += 1;
        }

        let adaptive = PpoConfig {
            risk_mode: RiskMode::Adaptive,
            total_iterations: 10,
            ..small_cfg()
        };
        let mut state = TrainState::new(&adaptive, 5, 8, 1, 0).unwrap();
        assert_eq!(state.alpha, 0.0); // t = 0 is exactly alpha_start
        // constant critic outputs -> CV floored -> final alpha ~ alpha_final
        batch.quantiles = vec![vec![2.0, 2.0, 2.0]; 8];
        state.iteration = 9; // risk update after the last batch passes t = T
        let alpha = update_risk(&mut state, &batch, &adaptive).unwrap();
        assert!((alpha - adaptive.alpha_final).abs() < 1e-9);
        assert_eq!(state.last_batch_cv, 0.0);
    }

    #[test]
    fn train_iteration_zero_lr_keeps_parameters_and_reports_stats() {
        let cfg = PpoConfig {
            actor_lr: 0.0,
            critic_lr: 0.0,
            entropy_coeff: 0.0,
            ..small_cfg()
        };
        let mut envs = make_envs(&cfg, 21);
        let mut state = TrainState::new(&cfg, 5, 8, 1, 21).unwrap();
        let actor_before = state.actor.clone();
        let critic_before = state.critic.clone();
        let stats = train_iteration(&mut state, &mut envs, &cfg).unwrap();
        assert_eq!(state.actor, actor_before);
        assert_eq!(state.critic, critic_before);
        assert_eq!(stats.iteration, 0);
        assert!(stats.total_reward.is_finite());
        assert_eq!(state.iteration, 1);
    }

    #[test]
    fn scalar_ppo_reads_single_atom_for_every_measure() {
        let d = QuantileDistribution::new(vec![0.37]).unwrap();
        for measure in [
            DistortionMeasure::Neutral,
            DistortionMeasure::wang(0.9).unwrap(),
            DistortionMeasure::wang(-0.9).unwrap(),
            DistortionMeasure::cvar(0.5).unwrap(),
        ] {
            assert_eq!(distorted_value(&d, &measure).to_bits(), 0.37f64.to_bits());
        }
    }

    #[test]
    fn risky_env_trains_end_to_end_smoke() {
        let cfg = PpoConfig {
            n_envs: 4,
            rollout_length: 8,
            n_quantiles: 8,
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            minibatch_size: 32,
            update_epochs: 2,
            total_iterations: 5,
            normalize_advantages: false,
            risk_mode: RiskMode::FixedNeutral,
            ..PpoConfig::default()
        };
        let mut envs: Vec<RiskyChoiceEnv> =
            (0..cfg.n_envs).map(|e| RiskyChoiceEnv::new(1, e as u64)).collect();
        let mut state = TrainState::new(&cfg, 1, 1, 1, 1).unwrap();
        for _ in 0..5 {
            let stats = train_iteration(&mut state, &mut envs, &cfg).unwrap();
            assert!(stats.total_reward.is_finite());
        }
    }
}
