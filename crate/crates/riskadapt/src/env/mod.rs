//! Desk-scale environments: a planar wheeled-inverted-pendulum balancer and
//! a one-step risky-choice task, plus vectorized stepping with auto-reset.
//!
//! Every environment owns its own pre-split RNG stream, so stepping a batch
//! is deterministic regardless of iteration order or any future
//! parallelization across environments.

mod balancer;
mod risky;

pub use balancer::{
    apply_push, compute_reward, support_angle, BalancerConfig, BalancerEnv, BalancerState,
    Command, DisturbanceSchedule, RewardBreakdown,
};
pub use risky::{pull_arm, RiskyChoiceEnv, RISKY_HIGH_REWARD, RISKY_LOW_REWARD, SAFE_REWARD};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("non-finite action {value} at env {env_index} (step {t_step})")]
    NonFiniteAction {
        env_index: usize,
        t_step: u64,
        value: f64,
    },
    #[error("action vector length {got}, expected {expected}")]
    ActionDimMismatch { expected: usize, got: usize },
    #[error("batch length mismatch: {n_envs} envs, {n_actions} action vectors")]
    BatchLengthMismatch { n_envs: usize, n_actions: usize },
    #[error("invalid arm index {0} (0 = safe, 1 = risky)")]
    InvalidArm(usize),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

/// One transition's results. Observations are the post-step (post-reset,
/// when the episode ended) views of the environment.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub tracking_reward: f64,
    pub done: bool,
    pub crashed: bool,
    pub actor_obs: Vec<f64>,
    pub privileged_obs: Vec<f64>,
}

/// Common environment surface for the training loop. The actor sees a
/// partial observation; the critic additionally sees privileged extras.
pub trait Env {
    fn actor_obs_dim(&self) -> usize;
    fn privileged_obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn actor_obs(&self) -> Vec<f64>;
    fn privileged_obs(&self) -> Vec<f64>;
    fn reset(&mut self);
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError>;
}

/// Elementwise step over a batch of environments with auto-reset on episode
/// end. Results are independent of iteration order because each environment
/// carries its own RNG stream.
pub fn step_all<E: Env>(envs: &mut [E], actions: &[Vec<f64>]) -> Result<Vec<StepOutcome>, EnvError> {
    if envs.len() != actions.len() {
        return Err(EnvError::BatchLengthMismatch {
            n_envs: envs.len(),
            n_actions: actions.len(),
        });
    }
    let mut outcomes = Vec::with_capacity(envs.len());
    for (env, action) in envs.iter_mut().zip(actions) {
        let mut outcome = env.step(action)?;
        if outcome.done {
            env.reset();
            outcome.actor_obs = env.actor_obs();
            outcome.privileged_obs = env.privileged_obs();
        }
        outcomes.push(outcome);
    }
    Ok(outcomes)
}
