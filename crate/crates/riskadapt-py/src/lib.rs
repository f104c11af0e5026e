//! Python bindings for the core types and operations: quantile
//! distributions, distortion risk measures, the adaptive risk schedule, and
//! the two environments. Built as an extension module `riskadapt_py`; see
//! python/smoke_test.py for usage.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use riskadapt::env::{self, Env};
use riskadapt::risk;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_measure(kind: &str, level: f64) -> PyResult<risk::DistortionMeasure> {
    match kind {
        "neutral" => Ok(risk::DistortionMeasure::Neutral),
        "wang" => risk::DistortionMeasure::wang(level).map_err(value_err),
        "cvar" => risk::DistortionMeasure::cvar(level).map_err(value_err),
        other => Err(PyValueError::new_err(format!(
            "unknown measure kind `{other}` (expected neutral, wang, cvar)"
        ))),
    }
}

/// N sorted return quantiles.
#[pyclass(name = "QuantileDistribution")]
struct PyQuantileDistribution {
    inner: risk::QuantileDistribution,
}

#[pymethods]
impl PyQuantileDistribution {
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: risk::QuantileDistribution::new(values).map_err(value_err)?,
        })
    }

    /// Sorted quantile values.
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn n_quantiles(&self) -> usize {
        self.inner.n_quantiles()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    /// Distorted expectation under a measure: kind in {neutral, wang, cvar}.
    #[pyo3(signature = (kind, level = 0.0))]
    fn distorted_value(&self, kind: &str, level: f64) -> PyResult<f64> {
        Ok(risk::distorted_value(&self.inner, &parse_measure(kind, level)?))
    }

    /// Coefficient of variation sigma / mu over the atoms.
    fn coefficient_of_variation(&self) -> f64 {
        risk::coefficient_of_variation(&self.inner)
    }

    /// Pinball loss against a scalar target: returns (loss, gradient).
    fn quantile_loss(&self, target: f64) -> PyResult<(f64, Vec<f64>)> {
        if !target.is_finite() {
            return Err(PyValueError::new_err("target must be finite"));
        }
        Ok(risk::quantile_loss(&self.inner, target))
    }

    fn __repr__(&self) -> String {
        format!(
            "QuantileDistribution(n={}, mean={:.6})",
            self.inner.n_quantiles(),
            self.inner.mean()
        )
    }
}

/// Wang distortion g_alpha(tau) = Phi(Phi^-1(tau) + alpha).
#[pyfunction]
fn wang_distortion(tau: f64, alpha: f64) -> PyResult<f64> {
    risk::wang_distortion(tau, alpha).map_err(value_err)
}

/// CVaR distortion min(tau / beta, 1).
#[pyfunction]
fn cvar_distortion(tau: f64, beta: f64) -> PyResult<f64> {
    risk::cvar_distortion(tau, beta).map_err(value_err)
}

/// Standard normal CDF.
#[pyfunction]
fn normal_cdf(x: f64) -> f64 {
    risk::normal_cdf(x)
}

/// alpha_t = (alpha_0 - alpha_T) exp(-(t/T)/cv) + alpha_T.
#[pyfunction]
fn adaptive_alpha(t: u64, alpha_start: f64, alpha_final: f64, total_steps: u64, cv: f64) -> PyResult<f64> {
    let schedule =
        risk::RiskSchedule::new(alpha_start, alpha_final, total_steps).map_err(value_err)?;
    Ok(risk::adaptive_alpha(t, &schedule, cv))
}

/// Planar wheeled-inverted-pendulum balancer with scheduled pushes.
#[pyclass(name = "BalancerEnv")]
struct PyBalancerEnv {
    inner: env::BalancerEnv,
}

#[pymethods]
impl PyBalancerEnv {
    /// Seeded construction; `pushes` toggles the disturbance schedule.
    #[new]
    #[pyo3(signature = (seed = 0, stream = 0, pushes = true))]
    fn new(seed: u64, stream: u64, pushes: bool) -> PyResult<Self> {
        let mut cfg = env::BalancerConfig::default();
        if !pushes {
            cfg.disturbance = env::DisturbanceSchedule::disabled();
        }
        Ok(Self {
            inner: env::BalancerEnv::new(cfg, seed, stream).map_err(value_err)?,
        })
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset();
        self.inner.actor_obs()
    }

    /// Apply a wheel torque; returns (actor_obs, reward, done, crashed).
    fn step(&mut self, torque: f64) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let out = self
            .inner
            .step(&[torque])
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok((out.actor_obs, out.reward, out.done, out.crashed))
    }

    fn actor_obs(&self) -> Vec<f64> {
        self.inner.actor_obs()
    }

    fn privileged_obs(&self) -> Vec<f64> {
        self.inner.privileged_obs()
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.state;
        format!(
            "BalancerEnv(t={}, p={:.4}, v={:.4}, command={:.2})",
            s.t_step, s.p, s.v, self.inner.command.vx_c
        )
    }
}

/// One-step safe-versus-risky choice task.
#[pyclass(name = "RiskyChoiceEnv")]
struct PyRiskyChoiceEnv {
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyRiskyChoiceEnv {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Draw the reward of an arm: 0 is safe (always 1.0), 1 is risky
    /// (0.0 or 2.5, equal odds).
    fn pull(&mut self, arm: usize) -> PyResult<f64> {
        env::pull_arm(arm, &mut self.rng).map_err(value_err)
    }
}

#[pymodule]
fn riskadapt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyQuantileDistribution>()?;
    m.add_class::<PyBalancerEnv>()?;
    m.add_class::<PyRiskyChoiceEnv>()?;
    m.add_function(wrap_pyfunction!(wang_distortion, m)?)?;
    m.add_function(wrap_pyfunction!(cvar_distortion, m)?)?;
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_alpha, m)?)?;
    Ok(())
}
