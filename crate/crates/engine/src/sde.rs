//! Closed-form machinery for scalar linear SDEs.
//!
//! The central object is the inhomogeneous linear SDE
//!
//! ```text
//! dx = (a1(t) x + a2(t)) dt + (b1(t) x + b2(t)) dw
//! ```
//!
//! with time-dependent coefficients represented as piecewise-constant
//! functions, so that every time integral is an exact sum over pieces.
//! The homogeneous case (`a2 = b2 = 0`) is exponential Brownian motion,
//! for which moments of every positive order are available in closed form.
//! Everything else in the library checks against this module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("step function needs equally many breakpoints and values (got {breaks} and {values})")]
    MismatchedLengths { breaks: usize, values: usize },
    #[error("step function breakpoints must start at 0 and strictly increase")]
    BadBreakpoints,
    #[error("step function values must be finite")]
    NonFiniteValue,
    #[error("moment order k must be positive (got {0})")]
    NonPositiveOrder(f64),
    #[error("initial value must be positive (got {0})")]
    NonPositiveInitial(f64),
    #[error("time must be non-negative (got {0})")]
    NegativeTime(f64),
    #[error("operation requires homogeneous coefficients (a2 = b2 = 0)")]
    NotHomogeneous,
    #[error("coefficient integral is not finite at t = {0}")]
    NonFiniteIntegral(f64),
    #[error("time grid must be strictly increasing")]
    BadTimeGrid,
    #[error("noise sequence length {noise} does not match grid intervals {intervals}")]
    NoiseLengthMismatch { noise: usize, intervals: usize },
    #[error("integrating factor degenerated (H = {0}) — coefficients are corrupt")]
    DegenerateFactor(f64),
    #[error("constants failed validation: {0}")]
    BadConstants(String),
}

/// Piecewise-constant function of time.
///
/// `values[i]` applies on `[breaks[i], breaks[i+1])`; the last value extends
/// to infinity. Breakpoints start at 0, where model time starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    /// A function that is `c` for all times.
    pub fn constant(c: f64) -> Self {
        Self { breaks: vec![0.0], values: vec![c] }
    }

    /// Piecewise-constant function with `values[i]` on `[breaks[i], breaks[i+1])`.
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self, SdeError> {
        if breaks.len() != values.len() {
            return Err(SdeError::MismatchedLengths { breaks: breaks.len(), values: values.len() });
        }
        if breaks.is_empty() || breaks[0] != 0.0 || breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SdeError::BadBreakpoints);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::NonFiniteValue);
        }
        Ok(Self { breaks, values })
    }

    /// Value at time `t` (constant extension before 0 and after the last break).
    pub fn value_at(&self, t: f64) -> f64 {
        match self.breaks.iter().rposition(|&b| b <= t) {
            Some(i) => self.values[i],
            None => self.values[0],
        }
    }

    /// Exact integral over `[0, t]`.
    pub fn integral(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for (i, &b) in self.breaks.iter().enumerate() {
            if b >= t {
                break;
            }
            let end = self.breaks.get(i + 1).copied().unwrap_or(f64::INFINITY).min(t);
            total += self.values[i] * (end - b);
        }
        total
    }

    /// The pointwise square, on the same mesh.
    pub fn squared(&self) -> StepFunction {
        StepFunction {
            breaks: self.breaks.clone(),
            values: self.values.iter().map(|v| v * v).collect(),
        }
    }

    /// True when the function is identically zero.
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Coefficients of the inhomogeneous linear SDE
/// `dx = (a1 x + a2) dt + (b1 x + b2) dw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSdeCoefficients {
    /// Drift slope (1/year).
    pub a1: StepFunction,
    /// Drift offset (value/year).
    pub a2: StepFunction,
    /// Volatility slope (1/sqrt(year)).
    pub b1: StepFunction,
    /// Volatility offset (value/sqrt(year)).
    pub b2: StepFunction,
}

impl LinearSdeCoefficients {
    /// Homogeneous coefficients (`a2 = b2 = 0`).
    pub fn homogeneous(a1: StepFunction, b1: StepFunction) -> Self {
        Self {
            a1,
            a2: StepFunction::constant(0.0),
            b1,
            b2: StepFunction::constant(0.0),
        }
    }

    /// Constant-coefficient exponential Brownian motion `dx = a x dt + b x dw`.
    pub fn gbm(a: f64, b: f64) -> Self {
        Self::homogeneous(StepFunction::constant(a), StepFunction::constant(b))
    }

    /// True when `a2 = b2 = 0`.
    pub fn is_homogeneous(&self) -> bool {
        self.a2.is_zero() && self.b2.is_zero()
    }
}

/// Calibrated model constants on the annual scale, with the monthly values
/// they were derived from when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedConstants {
    /// Annual index drift (1/year).
    pub psi: f64,
    /// Annual index volatility (1/sqrt(year)).
    pub phi: f64,
    /// Annual salary drift (1/year).
    pub xi: f64,
    /// Annual salary volatility (1/sqrt(year)).
    pub eta: f64,
    /// Contribution fraction of salary (dimensionless).
    pub lambda_contrib: f64,
    /// Monthly index drift (1/month), when calibrated from monthly data.
    pub q_monthly: Option<f64>,
    /// Monthly index volatility (1/sqrt(month)), when calibrated from monthly data.
    pub r_monthly_vol: Option<f64>,
}

impl CalibratedConstants {
    /// The baseline calibration used by the reference tables:
    /// psi = 0.0329, phi = 0.3464, xi = -0.0328, eta = sqrt(1/6), lambda = 0.1,
    /// derived from monthly q = 0.002742 and monthly volatility 0.1.
    pub fn baseline() -> Self {
        Self {
            psi: 0.0329,
            phi: 0.3464,
            xi: -0.0328,
            eta: (1.0 / 6.0_f64).sqrt(),
            lambda_contrib: 0.1,
            q_monthly: Some(0.002742),
            r_monthly_vol: Some(0.1),
        }
    }

    /// Checks positivity constraints and, when the monthly scale is populated,
    /// that the annual values are its 12-month rescaling (loose tolerance: the
    /// published constants are rounded to three or four figures).
    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.phi > 0.0) {
            return Err(SdeError::BadConstants(format!("phi must be positive, got {}", self.phi)));
        }
        if !(self.eta > 0.0) {
            return Err(SdeError::BadConstants(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda_contrib > 0.0 && self.lambda_contrib < 1.0) {
            return Err(SdeError::BadConstants(format!(
                "lambda_contrib must lie in (0,1), got {}",
                self.lambda_contrib
            )));
        }
        if let (Some(q), Some(r)) = (self.q_monthly, self.r_monthly_vol) {
            let (psi, phi) = rescale_monthly_to_annual(q, r);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
            if rel(self.psi, psi) > 1e-3 || rel(self.phi, phi) > 1e-3 {
                return Err(SdeError::BadConstants(format!(
                    "annual constants ({}, {}) are not the 12-month rescaling of monthly ({}, {})",
                    self.psi, self.phi, q, r
                )));
            }
        }
        Ok(())
    }
}

/// k-th moment of homogeneous exponential Brownian motion at time `t`:
/// `x0^k * exp(k * int a1 + (k^2 - k)/2 * int b1^2)`.
///
/// `k` is any positive real, not just an integer.
pub fn lognormal_moment(
    x0: f64,
    coeffs: &LinearSdeCoefficients,
    t: f64,
    k: f64,
) -> Result<f64, SdeError> {
    if !(x0 > 0.0) {
        return Err(SdeError::NonPositiveInitial(x0));
    }
    if !(k > 0.0) {
        return Err(SdeError::NonPositiveOrder(k));
    }
    if t < 0.0 {
        return Err(SdeError::NegativeTime(t));
    }
    if !coeffs.is_homogeneous() {
        return Err(SdeError::NotHomogeneous);
    }
    let int_a = coeffs.a1.integral(t);
    let int_b2 = coeffs.b1.squared().integral(t);
    let exponent = k * int_a + 0.5 * (k * k - k) * int_b2;
    if !exponent.is_finite() {
        return Err(SdeError::NonFiniteIntegral(t));
    }
    Ok(x0.powf(k) * exponent.exp())
}

/// Evaluates the closed-form solution of the inhomogeneous linear SDE along a
/// discrete Brownian path.
///
/// With the integrating factor `H(t) = exp(int (a1 - b1^2/2) ds + int b1 dw)`,
/// the solution is `X(t) = H(t) [x0 + int (a2 - b1 b2)/H ds + int b2/H dw]`.
/// Deterministic time integrals of the coefficients are exact over the
/// piecewise-constant mesh; stochastic integrals and the `1/H` correction
/// integrals use left-endpoint (Ito) quadrature on the supplied grid.
///
/// `noise` holds the Brownian increments over each grid interval, so
/// `noise.len() == times.len() - 1`.
pub fn solve_linear_sde_path(
    coeffs: &LinearSdeCoefficients,
    x0: f64,
    noise: &[f64],
    times: &[f64],
) -> Result<Vec<f64>, SdeError> {
    if times.len() < 2 || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SdeError::BadTimeGrid);
    }
    if noise.len() != times.len() - 1 {
        return Err(SdeError::NoiseLengthMismatch {
            noise: noise.len(),
            intervals: times.len() - 1,
        });
    }

    let b1_sq = coeffs.b1.squared();
    let mut path = Vec::with_capacity(times.len());
    path.push(x0);

    // log H accumulates exactly for the dt part, left-point for the dw part
    let mut log_h = 0.0_f64;
    let mut corr_dt = 0.0; // int (a2 - b1 b2)/H ds
    let mut corr_dw = 0.0; // int b2/H dw
    for (i, dw) in noise.iter().enumerate() {
        let (t0, t1) = (times[i], times[i + 1]);
        let dt = t1 - t0;
        let h = log_h.exp();
        if !(h > 0.0) || !h.is_finite() {
            return Err(SdeError::DegenerateFactor(h));
        }
        let a2 = coeffs.a2.value_at(t0);
        let b1 = coeffs.b1.value_at(t0);
        let b2 = coeffs.b2.value_at(t0);
        corr_dt += (a2 - b1 * b2) / h * dt;
        corr_dw += b2 / h * dw;
        log_h += coeffs.a1.integral(t1) - coeffs.a1.integral(t0) - 0.5 * (b1_sq.integral(t1) - b1_sq.integral(t0))
            + b1 * dw;
        let h_new = log_h.exp();
        if !h_new.is_finite() {
            return Err(SdeError::DegenerateFactor(h_new));
        }
        path.push(h_new * (x0 + corr_dt + corr_dw));
    }
    Ok(path)
}

/// Rescales a monthly drift/volatility pair to annual units:
/// `psi = 12 q` and `phi = sqrt(12) r_vol`.
pub fn rescale_monthly_to_annual(q: f64, r_vol: f64) -> (f64, f64) {
    (12.0 * q, 12.0_f64.sqrt() * r_vol)
}
