//! Planar wheeled inverted pendulum with command tracking and scheduled
//! horizontal pushes.
//!
//! The body is a point mass on a rigid rod above a driven wheel. Wheel
//! torque accelerates the wheel and applies the reaction to the body, so
//! balancing and velocity tracking couple through the single actuator.
//! Pitch and wheel dynamics are integrated with semi-implicit Euler at the
//! 50 Hz control rate; for this system the integrator's energy error is
//! one-sided (dissipative), which keeps the zero-torque energy balance
//! monotone up to friction.
//!
//! The actor observation is deliberately partial: wheel position, friction,
//! mass scaling, and the active push force are visible only to the critic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Env, EnvError, StepOutcome};

/// Scheduled horizontal pushes: windows of `duration_s` every `interval_s`,
/// starting at `interval_s`, cycling through `magnitudes` with alternating
/// sign.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSchedule {
    pub enabled: bool,
    pub interval_s: f64,
    pub duration_s: f64,
    pub magnitudes: Vec<f64>,
}

impl Default for DisturbanceSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            interval_s: 2.0,
            duration_s: 0.5,
            magnitudes: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

impl DisturbanceSchedule {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.duration_s < self.interval_s) {
            return Err(EnvError::InvalidConfig(format!(
                "disturbance duration_s {} must be below interval_s {}",
                self.duration_s, self.interval_s
            )));
        }
        if self.magnitudes.iter().any(|&m| !(m >= 0.0)) {
            return Err(EnvError::InvalidConfig(
                "disturbance magnitudes must be non-negative".into(),
            ));
        }
        if self.enabled && self.magnitudes.is_empty() {
            return Err(EnvError::InvalidConfig(
                "enabled disturbance schedule needs at least one magnitude".into(),
            ));
        }
        Ok(())
    }

    /// Signed push force in effect at step index `t_step`.
    pub fn force_at(&self, t_step: u64, dt: f64) -> f64 {
        if !self.enabled || self.magnitudes.is_empty() {
            return 0.0;
        }
        let steps_per_interval = (self.interval_s / dt).round() as u64;
        let steps_per_duration = (self.duration_s / dt).round() as u64;
        if steps_per_interval == 0 || t_step < steps_per_interval {
            return 0.0;
        }
        if t_step % steps_per_interval >= steps_per_duration {
            return 0.0;
        }
        let k = t_step / steps_per_interval; // push index, 1-based
        let magnitude = self.magnitudes[((k - 1) as usize) % self.magnitudes.len()];
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sign * magnitude
    }
}

/// Physics constants, reward shaping, and episode parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BalancerConfig {
    pub dt: f64,
    pub gravity: f64,
    pub pendulum_length: f64,
    pub body_mass: f64,
    pub wheel_mass: f64,
    pub wheel_radius: f64,
    pub torque_max: f64,
    /// Rolling resistance on the wheel; leaks velocity toward zero so the
    /// task has a well-defined cruise torque.
    pub rolling_drag: f64,
    pub friction_range: (f64, f64),
    pub mass_scale_range: (f64, f64),
    pub crash_pitch: f64,
    pub horizon: u64,
    pub upright_threshold: f64,
    pub sigma: f64,
    pub sigma_yaw: f64,
    pub exp_coeff: f64,
    pub smoothness_weight: f64,
    pub energy_weight: f64,
    pub command_range: (f64, f64),
    pub reset_perturbation: f64,
    /// Keep the literal negated base-pitch form instead of the upright-
    /// rewarding sign.
    pub literal_base_pitch_sign: bool,
    pub disturbance: DisturbanceSchedule,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            gravity: 9.81,
            pendulum_length: 0.5,
            body_mass: 1.0,
            wheel_mass: 0.5,
            wheel_radius: 0.25,
            torque_max: 3.0,
            rolling_drag: 0.8,
            friction_range: (0.05, 0.2),
            mass_scale_range: (0.8, 1.2),
            crash_pitch: 0.7,
            horizon: 500,
            upright_threshold: 0.3,
            sigma: 0.25,
            sigma_yaw: 0.25,
            exp_coeff: 0.02,
            smoothness_weight: 0.1,
            energy_weight: 0.05,
            command_range: (-0.8, 0.8),
            reset_perturbation: 0.05,
            literal_base_pitch_sign: false,
            disturbance: DisturbanceSchedule::default(),
        }
    }
}

impl BalancerConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("dt", self.dt),
            ("gravity", self.gravity),
            ("pendulum_length", self.pendulum_length),
            ("body_mass", self.body_mass),
            ("wheel_mass", self.wheel_mass),
            ("wheel_radius", self.wheel_radius),
            ("torque_max", self.torque_max),
            ("crash_pitch", self.crash_pitch),
            ("sigma", self.sigma),
            ("sigma_yaw", self.sigma_yaw),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EnvError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("friction_range", self.friction_range),
            ("mass_scale_range", self.mass_scale_range),
            ("command_range", self.command_range),
        ] {
            if !(lo <= hi) {
                return Err(EnvError::InvalidConfig(format!(
                    "{name} must be ordered, got ({lo}, {hi})"
                )));
            }
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.reset_perturbation >= 0.0) {
            return Err(EnvError::InvalidConfig(
                "reset_perturbation must be >= 0".into(),
            ));
        }
        if !(self.rolling_drag >= 0.0) {
            return Err(EnvError::InvalidConfig("rolling_drag must be >= 0".into()));
        }
        self.disturbance.validate()
    }
}

/// Full simulator state. `friction_coeff`, `mass_scale`, and `active_push`
/// are privileged: hidden from the actor, visible to the critic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancerState {
    pub x: f64,
    pub v: f64,
    pub p: f64,
    pub p_dot: f64,
    pub t_step: u64,
    pub friction_coeff: f64,
    pub mass_scale: f64,
    pub active_push: f64,
}

/// Episode command: target forward velocity and target pitch (fixed 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub vx_c: f64,
    pub p_c: f64,
}

/// Per-term reward contributions, the positive/negative sums, and the
/// composed total r_plus * exp(c * r_minus).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub base_pitch: f64,
    pub upright_balance: f64,
    pub linear_tracking: f64,
    pub support_polygon: f64,
    pub action_smoothness: f64,
    pub energy: f64,
    pub r_plus: f64,
    pub r_minus: f64,
    pub total: f64,
}

/// Angle of the line from the support point up to the CoM, measured from
/// vertical: arctan of the horizontal over vertical offset. For the single
/// pendulum this equals the pitch, with positive lean meaning the CoM is
/// ahead of the support.
pub fn support_angle(com_x: f64, com_z: f64, support_x: f64, support_z: f64) -> f64 {
    ((com_x - support_x) / (com_z - support_z)).atan()
}

/// Set the scheduled push force on the state for step `t_step`.
pub fn apply_push(
    state: &mut BalancerState,
    schedule: &DisturbanceSchedule,
    t_step: u64,
    dt: f64,
) {
    state.active_push = schedule.force_at(t_step, dt);
}

/// Task reward terms in their planar degenerate form.
pub fn compute_reward(
    _prev_state: &BalancerState,
    state: &BalancerState,
    command: &Command,
    action: f64,
    last_action: f64,
    cfg: &BalancerConfig,
) -> RewardBreakdown {
    let l = cfg.pendulum_length;
    let is_upright = (state.p - command.p_c).abs() < cfg.upright_threshold;

    let aligned = (command.p_c - state.p).cos();
    let base_pitch = if cfg.literal_base_pitch_sign { -aligned } else { aligned };

    let upright_balance = if is_upright {
        // vertical CoM velocity of the pendulum tip: d/dt (l cos p)
        let v_z = -l * state.p.sin() * state.p_dot;
        (-v_z * v_z / cfg.sigma).exp() + (-state.p_dot * state.p_dot / cfg.sigma_yaw).exp()
    } else {
        0.0
    };

    let linear_tracking = if is_upright {
        let err = state.v - command.vx_c;
        (-err * err / cfg.sigma).exp()
    } else {
        0.0
    };

    // CoM relative to the wheel contact point, via the general geometry
    let com_x = state.x + l * state.p.sin();
    let com_z = l * state.p.cos();
    let angle = support_angle(com_x, com_z, state.x, 0.0);
    let support_polygon = if angle * command.vx_c < 0.0 {
        let margin = std::f64::consts::FRAC_PI_2 - angle.abs();
        -command.vx_c * command.vx_c * margin * margin
    } else {
        0.0
    };

    let da = action - last_action;
    let action_smoothness = -da * da * cfg.smoothness_weight;
    let energy = -action * action * cfg.energy_weight;

    let terms = [
        base_pitch,
        upright_balance,
        linear_tracking,
        support_polygon,
        action_smoothness,
        energy,
    ];
    let r_plus: f64 = terms.iter().filter(|&&t| t > 0.0).sum();
    let r_minus: f64 = terms.iter().filter(|&&t| t < 0.0).sum();
    let total = r_plus * (cfg.exp_coeff * r_minus).exp();

    RewardBreakdown {
        base_pitch,
        upright_balance,
        linear_tracking,
        support_polygon,
        action_smoothness,
        energy,
        r_plus,
        r_minus,
        total,
    }
}

/// The balancer environment; owns its pre-split RNG stream.
#[derive(Debug, Clone)]
pub struct BalancerEnv {
    cfg: BalancerConfig,
    env_index: u64,
    rng: ChaCha8Rng,
    pub state: BalancerState,
    pub command: Command,
    pub last_action: f64,
}

impl BalancerEnv {
    /// `stream` pre-splits this environment's randomness off the master
    /// seed; distinct streams never collide.
    pub fn new(cfg: BalancerConfig, master_seed: u64, stream: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        let mut env = Self {
            cfg,
            env_index: stream,
            rng,
            state: BalancerState {
                x: 0.0,
                v: 0.0,
                p: 0.0,
                p_dot: 0.0,
                t_step: 0,
                friction_coeff: 0.0,
                mass_scale: 1.0,
                active_push: 0.0,
            },
            command: Command { vx_c: 0.0, p_c: 0.0 },
            last_action: 0.0,
        };
        env.reset_internal();
        Ok(env)
    }

    pub fn config(&self) -> &BalancerConfig {
        &self.cfg
    }

    fn reset_internal(&mut self) {
        let s = self.cfg.reset_perturbation;
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        };
        let p = draw(&mut self.rng, -s, s);
        let p_dot = draw(&mut self.rng, -s, s);
        let v = draw(&mut self.rng, -s, s);
        let vx_c = draw(
            &mut self.rng,
            self.cfg.command_range.0,
            self.cfg.command_range.1,
        );
        let friction = draw(
            &mut self.rng,
            self.cfg.friction_range.0,
            self.cfg.friction_range.1,
        );
        let mass_scale = draw(
            &mut self.rng,
            self.cfg.mass_scale_range.0,
            self.cfg.mass_scale_range.1,
        );
        self.state = BalancerState {
            x: 0.0,
            v,
            p,
            p_dot,
            t_step: 0,
            friction_coeff: friction,
            mass_scale,
            active_push: 0.0,
        };
        self.command = Command { vx_c, p_c: 0.0 };
        self.last_action = 0.0;
    }

    /// Advance one control step; returns the reward breakdown together with
    /// the episode flags.
    pub fn step_detailed(
        &mut self,
        action: f64,
    ) -> Result<(RewardBreakdown, bool, bool), EnvError> {
        if !action.is_finite() {
            return Err(EnvError::NonFiniteAction {
                env_index: self.env_index as usize,
                t_step: self.state.t_step,
                value: action,
            });
        }
        let cfg = &self.cfg;
        let torque = action.clamp(-cfg.torque_max, cfg.torque_max);
        let prev_state = self.state;
        let prev_action = self.last_action;

        let t_step = self.state.t_step;
        apply_push(&mut self.state, &cfg.disturbance, t_step, cfg.dt);
        let push = self.state.active_push;

        let m = cfg.body_mass * self.state.mass_scale;
        let l = cfg.pendulum_length;
        let total_mass = m + cfg.wheel_mass;
        let c = self.state.friction_coeff;
        let (p, p_dot, v) = (self.state.p, self.state.p_dot, self.state.v);

        // Wheel: torque drives through the contact, against joint friction
        // and rolling resistance. Pushes act at the body CoM and reach the
        // wheel only through the actuator, not directly.
        let v_dot = (torque / cfg.wheel_radius - (c + cfg.rolling_drag) * v) / total_mass;
        // Body: gravity destabilizes, the accelerating support tips the body
        // the other way, wheel torque reacts on the body, pushes act
        // horizontally at the CoM, viscous friction at the joint. With zero
        // torque and no push the wheel stays at rest and the body reduces to
        // an isolated damped pendulum.
        let p_ddot = (cfg.gravity / l) * p.sin() - (v_dot / l) * p.cos()
            - torque / (m * l * l)
            + push * p.cos() / (m * l)
            - c * p_dot / (m * l * l);

        // semi-implicit Euler: velocities first, then positions
        self.state.v += cfg.dt * v_dot;
        self.state.p_dot += cfg.dt * p_ddot;
        self.state.x += cfg.dt * self.state.v;
        self.state.p += cfg.dt * self.state.p_dot;
        self.state.t_step += 1;

        let breakdown = compute_reward(
            &prev_state,
            &self.state,
            &self.command,
            torque,
            prev_action,
            cfg,
        );
        self.last_action = torque;

        let crashed = self.state.p.abs() > cfg.crash_pitch;
        let done = crashed || self.state.t_step >= cfg.horizon;
        Ok((breakdown, done, crashed))
    }

    /// Total mechanical energy of body and wheel (potential zero at the
    /// axle height).
    pub fn mechanical_energy(&self) -> f64 {
        let cfg = &self.cfg;
        let m = cfg.body_mass * self.state.mass_scale;
        let l = cfg.pendulum_length;
        let body = 0.5 * m * l * l * self.state.p_dot * self.state.p_dot
            + m * cfg.gravity * l * self.state.p.cos();
        let wheel = 0.5 * (m + cfg.wheel_mass) * self.state.v * self.state.v;
        body + wheel
    }
}

impl Env for BalancerEnv {
    fn actor_obs_dim(&self) -> usize {
        5
    }

    fn privileged_obs_dim(&self) -> usize {
        8
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn actor_obs(&self) -> Vec<f64> {
        vec![
            self.state.p,
            self.state.p_dot,
            self.state.v,
            self.command.vx_c,
            self.last_action,
        ]
    }

    fn privileged_obs(&self) -> Vec<f64> {
        let mut obs = self.actor_obs();
        obs.extend_from_slice(&[
            self.state.friction_coeff,
            self.state.mass_scale,
            self.state.active_push,
        ]);
        obs
    }

    fn reset(&mut self) {
        self.reset_internal();
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if action.len() != 1 {
            return Err(EnvError::ActionDimMismatch {
                expected: 1,
                got: action.len(),
            });
        }
        let (breakdown, done, crashed) = self.step_detailed(action[0])?;
        Ok(StepOutcome {
            reward: breakdown.total,
            tracking_reward: breakdown.linear_tracking,
            done,
            crashed,
            actor_obs: self.actor_obs(),
            privileged_obs: self.privileged_obs(),
        })
    }
}
