//! Risk-adaptive distributional PPO at desk scale.
//!
//! The crate is organized around five pieces:
//!
//! - [`risk`]: quantile distributions, Wang/CVaR distortion measures,
//!   quantile-regression loss, coefficient-of-variation uncertainty, and the
//!   adaptive risk schedule.
//! - [`nn`]: minimal double-precision MLPs with analytic gradients, a
//!   diagonal-Gaussian policy head, and Adam.
//! - [`env`]: a planar wheeled-inverted-pendulum balancer with disturbance
//!   scheduling, and a one-step risky-choice environment with a closed-form
//!   risk oracle.
//! - [`ppo`]: rollout collection, GAE over distorted values, the clipped
//!   actor update, the quantile critic update, and evaluation protocols.
//! - [`cli`] and friends: configuration, metrics persistence, checkpointing,
//!   sweeps, and SVG plots behind the `riskadapt` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod env;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod ppo;
pub mod risk;
pub mod util;
