//! Minimal feed-forward function approximators with analytic gradients.
//!
//! Double precision throughout, tanh hidden layers, identity output. The
//! actor is a diagonal Gaussian over the mean network's output with a
//! state-independent learnable log standard deviation; the critic's output
//! layer is read as raw quantile atoms and sorted into a
//! [`QuantileDistribution`] at the boundary.

#![allow(clippy::needless_range_loop)] // index loops mirror the matrix math

use rand::Rng;
use thiserror::Error;

use crate::risk::{QuantileDistribution, RiskError};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453; // ln(2 * pi)

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input length {got} does not match layer dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache does not match this network (layer {layer}: {got} vs {expected})")]
    StaleCache {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite gradient in parameter group {group} at index {index}")]
    NonFiniteGradient { group: usize, index: usize },
    #[error("parameter became non-finite after update (group {group}, index {index})")]
    NonFiniteParameter { group: usize, index: usize },
    #[error("parameter/gradient shape mismatch in group {group}: {got} vs {expected}")]
    ShapeMismatch {
        group: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Risk(#[from] RiskError),
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// Fully connected network. Weight matrices are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`Mlp::forward`], sufficient for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl MlpGradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            d_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGradients) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.d_weights {
            for x in w {
                *x *= factor;
            }
        }
        for b in &mut self.d_biases {
            for x in b {
                *x *= factor;
            }
        }
    }
}

/// Orthogonal-ish init: Gaussian matrix orthonormalized by modified
/// Gram-Schmidt along the shorter side, then scaled by `gain`.
fn orthogonal_init(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let gaussian = |rng: &mut dyn rand::RngCore| -> f64 {
        // Box-Muller keeps us independent of distribution crates here.
        let u1: f64 = loop {
            let u: f64 = rng.gen();
            if u > 1e-300 {
                break u;
            }
        };
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };

    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    // n vectors of length m, n <= m, orthonormalized
    let mut basis: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| gaussian(rng)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = basis.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= dot * y;
            }
        }
        let norm: f64 = basis[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm = if norm > 1e-12 { norm } else { 1.0 };
        for x in &mut basis[i] {
            *x = *x / norm * gain;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if transpose { basis[c][r] } else { basis[r][c] };
        }
    }
    out
}

impl Mlp {
    /// Build a network with orthogonal-ish hidden layers and the final layer
    /// scaled by `final_gain` (small for actors, 1.0 for critics).
    pub fn new(layer_dims: &[usize], final_gain: f64, rng: &mut impl Rng) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output dims");
        let hidden_gain = 5.0 / 3.0; // tanh gain
        let n_layers = layer_dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let gain = if l + 1 == n_layers { final_gain } else { hidden_gain };
            weights.push(orthogonal_init(fan_out, fan_in, gain, rng));
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        }
    }

    /// Rebuild from explicit parameters (checkpoint loading).
    pub fn from_parameters(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Self {
        assert_eq!(weights.len(), layer_dims.len() - 1);
        assert_eq!(biases.len(), layer_dims.len() - 1);
        for l in 0..weights.len() {
            assert_eq!(weights[l].len(), layer_dims[l] * layer_dims[l + 1]);
            assert_eq!(biases[l].len(), layer_dims[l + 1]);
        }
        Self {
            layer_dims,
            weights,
            biases,
        }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass with an activation record for backprop.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.n_layers();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut x = input.to_vec();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut sum = b[o];
                for i in 0..fan_in {
                    sum += row[i] * x[i];
                }
                z[o] = sum;
            }
            layer_inputs.push(x);
            pre_activations.push(z.clone());
            let last = l + 1 == n_layers;
            x = if last { z } else { z.iter().map(|v| v.tanh()).collect() };
        }
        Ok((
            x,
            ForwardCache {
                layer_inputs,
                pre_activations,
            },
        ))
    }

    /// Exact gradients of the recorded computation with respect to all
    /// parameters, plus the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
    ) -> Result<(MlpGradients, Vec<f64>), NnError> {
        let n_layers = self.n_layers();
        if cache.layer_inputs.len() != n_layers || cache.pre_activations.len() != n_layers {
            return Err(NnError::StaleCache {
                layer: 0,
                expected: n_layers,
                got: cache.layer_inputs.len(),
            });
        }
        if output_grad.len() != self.output_dim() {
            return Err(NnError::StaleCache {
                layer: n_layers,
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        for l in 0..n_layers {
            if cache.layer_inputs[l].len() != self.layer_dims[l]
                || cache.pre_activations[l].len() != self.layer_dims[l + 1]
            {
                return Err(NnError::StaleCache {
                    layer: l,
                    expected: self.layer_dims[l],
                    got: cache.layer_inputs[l].len(),
                });
            }
        }

        let mut grads = MlpGradients::zeros_like(self);
        let mut delta = output_grad.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let last = l + 1 == n_layers;
            if !last {
                for o in 0..fan_out {
                    let t = cache.pre_activations[l][o].tanh();
                    delta[o] *= 1.0 - t * t;
                }
            }
            let x = &cache.layer_inputs[l];
            let dw = &mut grads.d_weights[l];
            for o in 0..fan_out {
                let row = &mut dw[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    row[i] = delta[o] * x[i];
                }
                grads.d_biases[l][o] = delta[o];
            }
            let w = &self.weights[l];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    prev[i] += row[i] * delta[o];
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    /// Mutable views of every parameter group, declaration order
    /// (layer 0 weights, layer 0 biases, layer 1 weights, ...).
    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut groups = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            groups.push(w.as_mut_slice());
            groups.push(b.as_mut_slice());
        }
        groups
    }

    /// Gradient groups in the same order as [`Mlp::param_groups_mut`].
    pub fn grad_groups(grads: &MlpGradients) -> Vec<&[f64]> {
        let mut groups = Vec::with_capacity(grads.d_weights.len() * 2);
        for (w, b) in grads.d_weights.iter().zip(grads.d_biases.iter()) {
            groups.push(w.as_slice());
            groups.push(b.as_slice());
        }
        groups
    }

    pub fn param_group_lens(&self) -> Vec<usize> {
        let mut lens = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            lens.push(w.len());
            lens.push(b.len());
        }
        lens
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Bias-corrected adaptive-moment optimizer state over parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(group_lens: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn from_parts(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }
}

/// One Adam update over matching parameter/gradient groups. Aborts with a
/// diagnostic on non-finite gradients and asserts parameter finiteness after
/// the update.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
) -> Result<(), NnError> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(NnError::ShapeMismatch {
            group: 0,
            expected: state.m.len(),
            got: params.len(),
        });
    }
    for (g_idx, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.len() != g.len() || p.len() != state.m[g_idx].len() {
            return Err(NnError::ShapeMismatch {
                group: g_idx,
                expected: state.m[g_idx].len(),
                got: g.len(),
            });
        }
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                group: g_idx,
                index,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for g_idx in 0..params.len() {
        let p = &mut params[g_idx];
        let g = grads[g_idx];
        let m = &mut state.m[g_idx];
        let v = &mut state.v[g_idx];
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            if !p[i].is_finite() {
                return Err(NnError::NonFiniteParameter {
                    group: g_idx,
                    index: i,
                });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gaussian policy
// ---------------------------------------------------------------------------

/// Diagonal Gaussian policy: the mean network maps observations to action
/// means; log standard deviations are state-independent learnable
/// parameters, clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(obs_dim);
        dims.extend_from_slice(hidden);
        dims.push(action_dim);
        Self {
            mean_net: Mlp::new(&dims, 0.01, rng),
            log_std: vec![0.0; action_dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// action = mean + exp(log_std) * noise with caller-provided standard
    /// normal noise; also returns the exact log density of that action.
    pub fn sample_action(&self, obs: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64), NnError> {
        if noise.len() != self.action_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.action_dim(),
                got: noise.len(),
            });
        }
        let (mean, _) = self.mean_net.forward(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(self.log_std.iter().zip(noise))
            .map(|(&m, (&ls, &n))| m + ls.exp() * n)
            .collect();
        let log_prob = gaussian_log_prob(&mean, &self.log_std, &action);
        Ok((action, log_prob))
    }

    /// Log density of a given action plus the policy entropy (which is
    /// state-independent for a diagonal Gaussian).
    pub fn log_prob_and_entropy(&self, obs: &[f64], action: &[f64]) -> Result<(f64, f64), NnError> {
        if action.len() != self.action_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        let (mean, _) = self.mean_net.forward(obs)?;
        Ok((
            gaussian_log_prob(&mean, &self.log_std, action),
            self.entropy(),
        ))
    }

    /// Closed-form diagonal-Gaussian entropy.
    pub fn entropy(&self) -> f64 {
        let d = self.action_dim() as f64;
        self.log_std.iter().sum::<f64>() + d / 2.0 * (1.0 + LN_2PI)
    }

    pub fn clamp_log_std(&mut self) {
        for ls in &mut self.log_std {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Parameter groups: mean network groups followed by log_std.
    pub fn param_group_lens(&self) -> Vec<usize> {
        let mut lens = self.mean_net.param_group_lens();
        lens.push(self.log_std.len());
        lens
    }
}

/// Exact diagonal-Gaussian log density.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let mut lp = 0.0;
    for i in 0..mean.len() {
        let z = (action[i] - mean[i]) / log_std[i].exp();
        lp += -log_std[i] - 0.5 * LN_2PI - 0.5 * z * z;
    }
    lp
}

// ---------------------------------------------------------------------------
// Critic head
// ---------------------------------------------------------------------------

/// Read the critic's raw outputs as a sorted quantile distribution.
pub fn critic_forward(net: &Mlp, privileged_obs: &[f64]) -> Result<QuantileDistribution, NnError> {
    let (raw, _) = net.forward(privileged_obs)?;
    Ok(QuantileDistribution::new(raw)?)
}
