//! One-step two-arm choice task separating risk preferences.
//!
//! Arm 0 pays 1.0 deterministically; arm 1 pays 0.0 or 2.5 with equal
//! probability (mean 1.25). A risk-neutral or risk-seeking agent should
//! prefer the risky arm; an averse one the safe arm — the distorted value of
//! the risky arm under Wang(0.5) is about 0.771 < 1.0, which gives the task
//! a closed-form oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Env, EnvError, StepOutcome};

pub const SAFE_REWARD: f64 = 1.0;
pub const RISKY_LOW_REWARD: f64 = 0.0;
pub const RISKY_HIGH_REWARD: f64 = 2.5;

/// Draw one reward for the given arm index.
pub fn pull_arm(arm: usize, rng: &mut impl Rng) -> Result<f64, EnvError> {
    match arm {
        0 => Ok(SAFE_REWARD),
        1 => Ok(if rng.gen::<bool>() {
            RISKY_HIGH_REWARD
        } else {
            RISKY_LOW_REWARD
        }),
        other => Err(EnvError::InvalidArm(other)),
    }
}

/// One-step episodes over a constant observation; a continuous action picks
/// the risky arm when positive.
#[derive(Debug, Clone)]
pub struct RiskyChoiceEnv {
    rng: ChaCha8Rng,
}

impl RiskyChoiceEnv {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn arm_for_action(action: f64) -> usize {
        usize::from(action > 0.0)
    }
}

impl Env for RiskyChoiceEnv {
    fn actor_obs_dim(&self) -> usize {
        1
    }

    fn privileged_obs_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn actor_obs(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn privileged_obs(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn reset(&mut self) {}

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if action.len() != 1 {
            return Err(EnvError::ActionDimMismatch {
                expected: 1,
                got: action.len(),
            });
        }
        if !action[0].is_finite() {
            return Err(EnvError::NonFiniteAction {
                env_index: 0,
                t_step: 0,
                value: action[0],
            });
        }
        let arm = Self::arm_for_action(action[0]);
        let reward = pull_arm(arm, &mut self.rng)?;
        Ok(StepOutcome {
            reward,
            tracking_reward: 0.0,
            done: true,
            crashed: false,
            actor_obs: self.actor_obs(),
            privileged_obs: self.privileged_obs(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{distorted_value, DistortionMeasure, QuantileDistribution};

    #[test]
    fn safe_arm_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(pull_arm(0, &mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn invalid_arm_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pull_arm(2, &mut rng).is_err());
    }

    #[test]
    fn risky_arm_monte_carlo_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += pull_arm(1, &mut rng).unwrap();
        }
        let mean = sum / n as f64;
        assert!((mean - 1.25).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn averse_oracle_prefers_safe_arm() {
        // two-atom risky distribution {0, 2.5}: Wang(0.5) value is
        // 2.5 * (1 - Phi(0.5)) < 1.0
        let risky = QuantileDistribution::new(vec![RISKY_LOW_REWARD, RISKY_HIGH_REWARD]).unwrap();
        let averse = DistortionMeasure::wang(0.5).unwrap();
        let value = distorted_value(&risky, &averse);
        let phi_half = crate::risk::normal_cdf(0.5);
        assert!((value - RISKY_HIGH_REWARD * (1.0 - phi_half)).abs() < 1e-12);
        assert!((value - 0.771).abs() < 5e-4);
        assert!(value < SAFE_REWARD);

        // neutral and seeking prefer the risky arm
        let neutral = distorted_value(&risky, &DistortionMeasure::Neutral);
        assert!((neutral - 1.25).abs() < 1e-12);
        let seeking = distorted_value(&risky, &DistortionMeasure::wang(-0.5).unwrap());
        assert!(seeking > SAFE_REWARD);
    }

    #[test]
    fn episodes_terminate_immediately() {
        let mut env = RiskyChoiceEnv::new(3, 0);
        let out = env.step(&[0.4]).unwrap();
        assert!(out.done);
        assert!(!out.crashed);
        let out2 = env.step(&[-0.4]).unwrap();
        assert_eq!(out2.reward, SAFE_REWARD);
    }
}
