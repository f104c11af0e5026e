//! Distributional PPO with distortion-valued baselines and an adaptive risk
//! level.
//!
//! The actor is standard clipped-surrogate PPO. The critic predicts N return
//! quantiles; its distorted expectation under the current risk measure
//! serves as both the GAE baseline and the bootstrap value, and each
//! sample's advantage is additionally weighted by the distortion density at
//! its return quantile so the risk preference acts on actions as well as
//! baselines (the weight is exactly 1 at the neutral level). The critic
//! regresses raw (undistorted) quantiles against scalar GAE targets, so the
//! risk level can move every iteration without relearning the distribution.
//! With N = 1 every measure reads the single atom, which makes scalar PPO a
//! strict special case of the same loop.

mod eval;
mod train;

pub use eval::{evaluate, EvalProtocol, EvalReport, VelocityEval};
pub use train::{
    actor_update, collect_rollouts, compute_gae, critic_update, distortion_density,
    normalize_advantages, risk_weighted_advantages, train_iteration, update_risk, ActorStats,
    CriticStats,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::nn::{AdamState, GaussianPolicy, Mlp, NnError};
use crate::risk::{DistortionMeasure, RiskError, RiskSchedule};

/// RNG stream ids carved out of the master seed. Environment streams occupy
/// `0..n_envs`; everything else lives in disjoint high ranges.
pub const NOISE_STREAM_BASE: u64 = 1 << 32;
pub const UPDATE_STREAM: u64 = 2 << 32;
pub const INIT_STREAM: u64 = 3 << 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: u64 },
    #[error("train config error: {0}")]
    Config(String),
}

/// Risk handling variants of the baseline matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    Adaptive,
    FixedNeutral,
    FixedAverse,
    FixedSeeking,
    ScalarPpo,
}

impl RiskMode {
    pub const ALL: [RiskMode; 5] = [
        RiskMode::Adaptive,
        RiskMode::FixedNeutral,
        RiskMode::FixedAverse,
        RiskMode::FixedSeeking,
        RiskMode::ScalarPpo,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RiskMode::Adaptive => "adaptive",
            RiskMode::FixedNeutral => "fixed_neutral",
            RiskMode::FixedAverse => "fixed_averse",
            RiskMode::FixedSeeking => "fixed_seeking",
            RiskMode::ScalarPpo => "scalar_ppo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.as_str() == s)
    }
}

/// All training hyperparameters. Defaults are the desk-scale settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coeff: f64,
    pub n_quantiles: usize,
    pub rollout_length: usize,
    pub n_envs: usize,
    pub total_iterations: u64,
    pub risk_mode: RiskMode,
    /// Level for the fixed modes; resolved to 0.2 (averse) / -0.2 (seeking)
    /// / 0.0 (neutral) when absent.
    pub fixed_alpha: Option<f64>,
    pub alpha_start: f64,
    pub alpha_final: f64,
    pub normalize_advantages: bool,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            update_epochs: 4,
            minibatch_size: 512,
            entropy_coeff: 0.005,
            n_quantiles: 32,
            rollout_length: 64,
            n_envs: 64,
            total_iterations: 1000,
            risk_mode: RiskMode::Adaptive,
            fixed_alpha: None,
            alpha_start: 0.0,
            alpha_final: -0.2,
            normalize_advantages: true,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
        }
    }
}

impl PpoConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |key: &str, why: String| Err(TrainError::Config(format!("algo.{key}: {why}")));
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps", format!("must be > 0, got {}", self.clip_eps));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", format!("must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(
                "gae_lambda",
                format!("must be in [0, 1], got {}", self.gae_lambda),
            );
        }
        for (key, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("entropy_coeff", self.entropy_coeff),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(key, format!("must be finite and >= 0, got {v}"));
            }
        }
        for (key, v) in [
            ("update_epochs", self.update_epochs),
            ("minibatch_size", self.minibatch_size),
            ("n_quantiles", self.n_quantiles),
            ("rollout_length", self.rollout_length),
            ("n_envs", self.n_envs),
        ] {
            if v == 0 {
                return bad(key, "must be >= 1".into());
            }
        }
        if self.total_iterations == 0 {
            return bad("total_iterations", "must be >= 1".into());
        }
        if self.actor_hidden.is_empty() || self.critic_hidden.is_empty() {
            return bad("actor_hidden", "need at least one hidden layer".into());
        }
        match (self.risk_mode, self.fixed_alpha) {
            (RiskMode::FixedAverse, Some(a)) if !(a > 0.0) => {
                return bad("fixed_alpha", format!("fixed_averse needs alpha > 0, got {a}"));
            }
            (RiskMode::FixedSeeking, Some(a)) if !(a < 0.0) => {
                return bad("fixed_alpha", format!("fixed_seeking needs alpha < 0, got {a}"));
            }
            (RiskMode::FixedNeutral, Some(a)) if a != 0.0 => {
                return bad("fixed_alpha", format!("fixed_neutral needs alpha = 0, got {a}"));
            }
            (RiskMode::Adaptive | RiskMode::ScalarPpo, Some(a)) => {
                return bad(
                    "fixed_alpha",
                    format!("not applicable to {}, got {a}", self.risk_mode.as_str()),
                );
            }
            _ => {}
        }
        if let Some(a) = self.fixed_alpha {
            if !a.is_finite() {
                return bad("fixed_alpha", "must be finite".into());
            }
        }
        if !self.alpha_start.is_finite() || !self.alpha_final.is_finite() {
            return bad("alpha_start", "schedule endpoints must be finite".into());
        }
        Ok(())
    }

    /// Scalar PPO runs the identical loop with a single atom.
    pub fn effective_n_quantiles(&self) -> usize {
        match self.risk_mode {
            RiskMode::ScalarPpo => 1,
            _ => self.n_quantiles,
        }
    }

    /// The constant risk level for the fixed modes.
    pub fn resolved_fixed_alpha(&self) -> f64 {
        match self.risk_mode {
            RiskMode::FixedAverse => self.fixed_alpha.unwrap_or(0.2),
            RiskMode::FixedSeeking => self.fixed_alpha.unwrap_or(-0.2),
            _ => 0.0,
        }
    }

    pub fn schedule(&self) -> RiskSchedule {
        RiskSchedule {
            alpha_start: self.alpha_start,
            alpha_final: self.alpha_final,
            total_steps: self.total_iterations,
        }
    }

    /// Measure used to read values at a given risk level.
    pub fn measure_for(&self, alpha: f64) -> Result<DistortionMeasure, RiskError> {
        match self.risk_mode {
            RiskMode::FixedNeutral | RiskMode::ScalarPpo => Ok(DistortionMeasure::Neutral),
            _ => DistortionMeasure::wang(alpha),
        }
    }
}

/// Trajectories of one collection pass, time-major: index `t * n_envs + e`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub rollout_length: usize,
    pub actor_obs: Vec<Vec<f64>>,
    pub priv_obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub tracking_rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Distorted values under the measure in force at collection time.
    pub values: Vec<f64>,
    /// Sorted quantile predictions per state.
    pub quantiles: Vec<Vec<f64>>,
    /// Distorted bootstrap value of each environment's final observation.
    pub bootstrap_values: Vec<f64>,
    /// Risk level in force while this batch was collected.
    pub alpha: f64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Mutable training state: current iteration, risk level, networks,
/// optimizers, and the pre-split RNG streams.
pub struct TrainState {
    pub iteration: u64,
    pub alpha: f64,
    pub last_batch_cv: f64,
    pub actor: GaussianPolicy,
    pub critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub(crate) noise_rngs: Vec<ChaCha8Rng>,
    pub(crate) update_rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(
        cfg: &PpoConfig,
        actor_obs_dim: usize,
        priv_obs_dim: usize,
        action_dim: usize,
        master_seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(master_seed);
        init_rng.set_stream(INIT_STREAM);
        let actor = GaussianPolicy::new(actor_obs_dim, action_dim, &cfg.actor_hidden, &mut init_rng);
        let mut critic_dims = Vec::with_capacity(cfg.critic_hidden.len() + 2);
        critic_dims.push(priv_obs_dim);
        critic_dims.extend_from_slice(&cfg.critic_hidden);
        critic_dims.push(cfg.effective_n_quantiles());
        let critic = Mlp::new(&critic_dims, 1.0, &mut init_rng);
        let actor_opt = AdamState::new(&actor.param_group_lens(), cfg.actor_lr);
        let critic_opt = AdamState::new(&critic.param_group_lens(), cfg.critic_lr);
        let noise_rngs = (0..cfg.n_envs)
            .map(|e| {
                let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
                rng.set_stream(NOISE_STREAM_BASE + e as u64);
                rng
            })
            .collect();
        let mut update_rng = ChaCha8Rng::seed_from_u64(master_seed);
        update_rng.set_stream(UPDATE_STREAM);
        let alpha = match cfg.risk_mode {
            RiskMode::Adaptive => cfg.alpha_start,
            RiskMode::ScalarPpo => 0.0,
            _ => cfg.resolved_fixed_alpha(),
        };
        Ok(Self {
            iteration: 0,
            alpha,
            last_batch_cv: 0.0,
            actor,
            critic,
            actor_opt,
            critic_opt,
            noise_rngs,
            update_rng,
        })
    }

    /// Rebuild training state around checkpointed networks and optimizers.
    pub fn from_checkpoint(
        cfg: &PpoConfig,
        ckpt: crate::checkpoint::Checkpoint,
        master_seed: u64,
    ) -> Result<Self, TrainError> {
        let mut state = Self::new(
            cfg,
            ckpt.actor.mean_net.input_dim(),
            ckpt.critic.input_dim(),
            ckpt.actor.action_dim(),
            master_seed,
        )?;
        state.iteration = ckpt.iteration;
        state.alpha = ckpt.alpha;
        state.actor = ckpt.actor;
        state.critic = ckpt.critic;
        state.actor_opt = ckpt.actor_opt;
        state.critic_opt = ckpt.critic_opt;
        Ok(state)
    }

    pub fn current_measure(&self, cfg: &PpoConfig) -> Result<DistortionMeasure, RiskError> {
        cfg.measure_for(self.alpha)
    }

    pub fn to_checkpoint(&self) -> crate::checkpoint::Checkpoint {
        crate::checkpoint::Checkpoint {
            iteration: self.iteration,
            alpha: self.alpha,
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
        }
    }
}

/// Per-iteration curve quantities, one stats row each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: u64,
    pub total_reward: f64,
    pub tracking_reward: f64,
    pub entropy: f64,
    pub alpha: f64,
    pub batch_cv: f64,
    pub clip_fraction: f64,
    pub critic_loss: f64,
}
