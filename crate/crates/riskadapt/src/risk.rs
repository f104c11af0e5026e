//! Quantile return distributions, distortion risk measures, and the
//! adaptive risk schedule.
//!
//! A return distribution is represented by N atoms, atom i sitting at the
//! cumulative level tau_i = i/N. Distorted expectations reweight the atoms
//! through a monotone distortion g: [0,1] -> [0,1]; the Wang transform
//! g(tau) = Phi(Phi^-1(tau) + alpha) spans averse (alpha > 0) to seeking
//! (alpha < 0) preferences, and CVaR(beta) keeps only the worst beta tail.
//! Everything here is a pure function of its inputs.
#![allow(clippy::excessive_precision)] // published approximation tables keep their quoted digits

use thiserror::Error;

/// Floor applied to the mean when computing the coefficient of variation,
/// and to the CV itself inside the risk schedule.
pub const CV_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("quantile distribution needs at least one value")]
    EmptyDistribution,
    #[error("quantile value at index {0} is not finite")]
    NonFiniteQuantile(usize),
    #[error("tau must lie in [0, 1], got {0}")]
    TauOutOfRange(f64),
    #[error("wang alpha must be finite")]
    NonFiniteAlpha,
    #[error("cvar level must lie in (0, 1], got {0}")]
    CvarLevelOutOfRange(f64),
    #[error("risk schedule needs total_steps >= 1")]
    EmptySchedule,
}

// ---------------------------------------------------------------------------
// Standard normal CDF and inverse
// ---------------------------------------------------------------------------

// Rational Chebyshev approximation of erfc after W. J. Cody (1969),
// absolute error well below 1e-12 over the whole line.
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERFC_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERFC_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERFC_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERFC_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const INV_SQRT_PI: f64 = 5.6418958354775628695e-1;

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let result = if y <= 0.46875 {
        // erfc(x) = 1 - erf(x) via the erf rational form
        let z = y * y;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        return 1.0 - x * (num + ERF_A[3]) / (den + ERF_B[3]);
    } else if y <= 4.0 {
        let mut num = ERFC_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERFC_C[i]) * y;
            den = (den + ERFC_D[i]) * y;
        }
        (-y * y).exp() * (num + ERFC_C[7]) / (den + ERFC_D[7])
    } else {
        let z = 1.0 / (y * y);
        let mut num = ERFC_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERFC_P[i]) * z;
            den = (den + ERFC_Q[i]) * z;
        }
        let r = z * (num + ERFC_P[4]) / (den + ERFC_Q[4]);
        ((-y * y).exp() / y) * (INV_SQRT_PI - r)
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Standard normal CDF Phi(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

// Acklam's rational approximation of the inverse normal CDF, refined below
// with one Halley step against the high-precision CDF.
const PPF_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const PPF_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const PPF_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const PPF_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

/// Inverse standard normal CDF Phi^-1(p). Returns +-infinity at the endpoints.
pub fn normal_inv_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((PPF_C[0] * q + PPF_C[1]) * q + PPF_C[2]) * q + PPF_C[3]) * q + PPF_C[4]) * q
            + PPF_C[5])
            / ((((PPF_D[0] * q + PPF_D[1]) * q + PPF_D[2]) * q + PPF_D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((PPF_A[0] * r + PPF_A[1]) * r + PPF_A[2]) * r + PPF_A[3]) * r + PPF_A[4]) * r
            + PPF_A[5])
            * q
            / (((((PPF_B[0] * r + PPF_B[1]) * r + PPF_B[2]) * r + PPF_B[3]) * r + PPF_B[4]) * r
                + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((PPF_C[0] * q + PPF_C[1]) * q + PPF_C[2]) * q + PPF_C[3]) * q + PPF_C[4]) * q
            + PPF_C[5])
            / ((((PPF_D[0] * q + PPF_D[1]) * q + PPF_D[2]) * q + PPF_D[3]) * q + 1.0)
    };
    // One Halley refinement step takes the absolute error to ~1e-15.
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

// ---------------------------------------------------------------------------
// Quantile distributions
// ---------------------------------------------------------------------------

/// N return quantiles, sorted non-decreasing on construction.
///
/// Atom i (1-based) estimates the tau_i = i/N quantile of the return
/// distribution; raw critic outputs are projected onto valid distributions
/// by sorting.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDistribution {
    values: Vec<f64>,
}

impl QuantileDistribution {
    /// Build a distribution from raw (unordered) quantile estimates.
    pub fn new(mut values: Vec<f64>) -> Result<Self, RiskError> {
        if values.is_empty() {
            return Err(RiskError::EmptyDistribution);
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(RiskError::NonFiniteQuantile(i));
            }
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_quantiles(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// A risk preference applied to a quantile distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistortionMeasure {
    /// Expectation, no reweighting.
    Neutral,
    /// Wang transform with parameter alpha; averse for alpha > 0,
    /// seeking for alpha < 0, identity at alpha = 0.
    Wang { alpha: f64 },
    /// Conditional value at risk of the worst beta fraction, beta in (0, 1].
    Cvar { beta: f64 },
}

impl DistortionMeasure {
    pub fn wang(alpha: f64) -> Result<Self, RiskError> {
        if !alpha.is_finite() {
            return Err(RiskError::NonFiniteAlpha);
        }
        Ok(Self::Wang { alpha })
    }

    pub fn cvar(beta: f64) -> Result<Self, RiskError> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(RiskError::CvarLevelOutOfRange(beta));
        }
        Ok(Self::Cvar { beta })
    }

    /// Evaluate the distortion function g(tau). Assumes a validated measure.
    pub fn distort(&self, tau: f64) -> f64 {
        match *self {
            Self::Neutral => tau,
            Self::Wang { alpha } => wang_g(tau, alpha),
            Self::Cvar { beta } => (tau / beta).min(1.0),
        }
    }
}

fn wang_g(tau: f64, alpha: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else if tau >= 1.0 {
        1.0
    } else {
        normal_cdf(normal_inv_cdf(tau) + alpha)
    }
}

/// Wang distortion g_alpha(tau) = Phi(Phi^-1(tau) + alpha).
pub fn wang_distortion(tau: f64, alpha: f64) -> Result<f64, RiskError> {
    if !(0.0..=1.0).contains(&tau) || tau.is_nan() {
        return Err(RiskError::TauOutOfRange(tau));
    }
    if !alpha.is_finite() {
        return Err(RiskError::NonFiniteAlpha);
    }
    Ok(wang_g(tau, alpha))
}

/// CVaR distortion g_beta(tau) = min(tau / beta, 1).
pub fn cvar_distortion(tau: f64, beta: f64) -> Result<f64, RiskError> {
    if !(0.0..=1.0).contains(&tau) || tau.is_nan() {
        return Err(RiskError::TauOutOfRange(tau));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(RiskError::CvarLevelOutOfRange(beta));
    }
    Ok((tau / beta).min(1.0))
}

/// Per-atom distortion weights g(tau_i) - g(tau_{i-1}) for tau_i = i/N.
/// Non-negative and summing to 1 for any valid measure.
pub fn distortion_weights(n: usize, measure: &DistortionMeasure) -> Vec<f64> {
    let mut weights = Vec::with_capacity(n);
    let mut g_prev = 0.0;
    for i in 1..=n {
        let tau = i as f64 / n as f64;
        let g = measure.distort(tau);
        weights.push(g - g_prev);
        g_prev = g;
    }
    weights
}

/// Distorted expectation sum_i (g(tau_i) - g(tau_{i-1})) * theta_i over the
/// sorted quantiles. Neutral reduces to the arithmetic mean.
pub fn distorted_value(dist: &QuantileDistribution, measure: &DistortionMeasure) -> f64 {
    match measure {
        DistortionMeasure::Neutral => dist.mean(),
        _ => {
            let n = dist.n_quantiles();
            let mut value = 0.0;
            let mut g_prev = 0.0;
            for (i, &theta) in dist.values().iter().enumerate() {
                let tau = (i + 1) as f64 / n as f64;
                let g = measure.distort(tau);
                value += (g - g_prev) * theta;
                g_prev = g;
            }
            value
        }
    }
}

// ---------------------------------------------------------------------------
// Quantile regression loss
// ---------------------------------------------------------------------------

/// Midpoint quantile levels (2i - 1) / (2N), i = 1..N, used for regression.
pub fn midpoint_levels(n: usize) -> Vec<f64> {
    (1..=n).map(|i| (2 * i - 1) as f64 / (2 * n) as f64).collect()
}

/// Pinball loss of N predicted quantiles against a scalar return sample,
/// with the exact subgradient with respect to each atom.
///
/// loss = (1/N) sum_i (tau_i - 1{z < theta_i}) (z - theta_i),
/// dloss/dtheta_i = (1/N) (1{z < theta_i} - tau_i),
/// at midpoint levels tau_i = (2i - 1) / (2N).
pub fn quantile_loss(predicted: &QuantileDistribution, target: f64) -> (f64, Vec<f64>) {
    quantile_loss_sorted(predicted.values(), target)
}

/// Same as [`quantile_loss`] on an already sorted (or deliberately raw)
/// slice of atoms; level i pairs with position i.
pub fn quantile_loss_sorted(values: &[f64], target: f64) -> (f64, Vec<f64>) {
    let n = values.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (i, &theta) in values.iter().enumerate() {
        let tau = (2 * i + 1) as f64 / (2 * n) as f64;
        let diff = target - theta;
        let indicator = if diff < 0.0 { 1.0 } else { 0.0 };
        loss += inv_n * (tau - indicator) * diff;
        // at the kink the zero subgradient is the minimizer's choice
        grad.push(if diff == 0.0 { 0.0 } else { inv_n * (indicator - tau) });
    }
    (loss, grad)
}

// ---------------------------------------------------------------------------
// Uncertainty metric and adaptive risk schedule
// ---------------------------------------------------------------------------

/// Coefficient of variation sigma / mu over the quantile atoms (population
/// standard deviation). The mean is floored at [`CV_FLOOR`] so early-training
/// distributions with near-zero mean cannot blow up or flip sign.
pub fn coefficient_of_variation(dist: &QuantileDistribution) -> f64 {
    let mu = dist.mean();
    let n = dist.n_quantiles() as f64;
    let var = dist
        .values()
        .iter()
        .map(|&v| {
            let d = v - mu;
            d * d
        })
        .sum::<f64>()
        / n;
    var.sqrt() / mu.max(CV_FLOOR)
}

/// Linear-in-time, uncertainty-gated interpolation between an initial and a
/// final risk level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSchedule {
    pub alpha_start: f64,
    pub alpha_final: f64,
    pub total_steps: u64,
}

impl RiskSchedule {
    pub fn new(alpha_start: f64, alpha_final: f64, total_steps: u64) -> Result<Self, RiskError> {
        if total_steps == 0 {
            return Err(RiskError::EmptySchedule);
        }
        Ok(Self {
            alpha_start,
            alpha_final,
            total_steps,
        })
    }
}

/// alpha_t = (alpha_0 - alpha_T) exp(-(t/T) / cv) + alpha_T.
///
/// Exactly alpha_0 at t = 0; approaches alpha_T as t grows; higher
/// uncertainty (cv) holds the level closer to alpha_0. The cv is floored at
/// [`CV_FLOOR`].
pub fn adaptive_alpha(t: u64, schedule: &RiskSchedule, cv: f64) -> f64 {
    if t == 0 {
        return schedule.alpha_start;
    }
    let cv = cv.max(CV_FLOOR);
    let frac = t as f64 / schedule.total_steps as f64;
    (schedule.alpha_start - schedule.alpha_final) * (-frac / cv).exp() + schedule.alpha_final
}
