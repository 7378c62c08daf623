//! Weighted averages of exponential Brownian motions and their lognormal
//! approximation.
//!
//! An average of `n` independent exponential Brownian motions with common
//! drift and volatility is not lognormal. Matching its first two moments to
//! a single lognormal (the Fenton-Wilkinson technique) gives an effective
//! squared volatility that starts at `phi^2/n` and saturates toward `phi^2`
//! as the constituents decorrelate, plus a closed-form law for the average.
//! Power-law weights are supported as a diagnostic; the model downstream
//! uses the equal-weight reduction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constituent count of the modeled index.
pub const DEFAULT_CONSTITUENTS: usize = 500;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("constituent count must be positive")]
    ZeroConstituents,
    #[error("weight exponent must be non-negative (got {0})")]
    NegativeExponent(f64),
    #[error("time must be non-negative (got {0})")]
    NegativeTime(f64),
    #[error("volatility must be non-negative (got {0})")]
    NegativeVolatility(f64),
    #[error("initial value must be positive (got {0})")]
    NonPositiveInitial(f64),
}

/// Normalized power-law weights over `n` constituents:
/// weight of constituent `i` proportional to `i^alpha`, `i = 1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    /// Number of constituents.
    pub n: usize,
    /// Power-law exponent; 0 gives equal weights.
    pub alpha: f64,
    /// Normalized weights, summing to 1.
    pub weights: Vec<f64>,
}

impl WeightScheme {
    /// Equal weights `1/n`.
    pub fn equal(n: usize) -> Result<Self, IndexError> {
        Self::power_law(n, 0.0)
    }

    /// Weights proportional to `i^alpha`.
    ///
    /// Ratios are computed as `(i/n)^alpha` before normalizing, which stays
    /// bounded for exponents where `i^alpha` itself would overflow.
    pub fn power_law(n: usize, alpha: f64) -> Result<Self, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroConstituents);
        }
        if alpha < 0.0 {
            return Err(IndexError::NegativeExponent(alpha));
        }
        let nf = n as f64;
        let raw: Vec<f64> = (1..=n).map(|i| (i as f64 / nf).powf(alpha)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / total).collect();
        Ok(Self { n, alpha, weights })
    }
}

/// Sum of squared weights together with its large-n approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSumSquares {
    /// Exact sum of squared normalized weights.
    pub exact: f64,
    /// Large-n approximation `(alpha+1)^2 / ((2 alpha + 1) n)`.
    pub asymptotic: f64,
    /// `asymptotic / exact`.
    pub ratio: f64,
}

/// Computes the exact sum of squared weights for a scheme, alongside the
/// asymptotic estimate that controls the weighted law of large numbers.
pub fn weight_sum_squares(scheme: &WeightScheme) -> WeightSumSquares {
    let exact: f64 = scheme.weights.iter().map(|w| w * w).sum();
    let a = scheme.alpha;
    let asymptotic = (a + 1.0) * (a + 1.0) / ((2.0 * a + 1.0) * scheme.n as f64);
    WeightSumSquares { exact, asymptotic, ratio: asymptotic / exact }
}

/// Moment-matched lognormal approximation of the equal-weight average of `n`
/// independent exponential Brownian motions with common drift and volatility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwApproximation {
    /// Common constituent drift (1/year).
    pub psi: f64,
    /// Common constituent volatility (1/sqrt(year)).
    pub phi: f64,
    /// Number of constituents.
    pub n: usize,
}

impl FwApproximation {
    /// Builds the approximation, rejecting empty or negative-volatility inputs.
    pub fn new(psi: f64, phi: f64, n: usize) -> Result<Self, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroConstituents);
        }
        if phi < 0.0 {
            return Err(IndexError::NegativeVolatility(phi));
        }
        Ok(Self { psi, phi, n })
    }

    /// The baseline 500-constituent approximation at the calibrated constants.
    pub fn baseline() -> Self {
        let c = crate::sde::CalibratedConstants::baseline();
        Self { psi: c.psi, phi: c.phi, n: DEFAULT_CONSTITUENTS }
    }
}

/// Effective squared volatility of the matched lognormal at time `t`:
/// `Phi^2(t) = phi^2 e^{phi^2 t} / (e^{phi^2 t} + n - 1)`.
///
/// Evaluated as `phi^2 / (1 + (n-1) e^{-phi^2 t})`, which cannot overflow at
/// large `t`. Rises from `phi^2/n` at `t = 0` toward `phi^2`.
pub fn fw_phi_squared(fw: &FwApproximation, t: f64) -> Result<f64, IndexError> {
    if t < 0.0 {
        return Err(IndexError::NegativeTime(t));
    }
    let p2 = fw.phi * fw.phi;
    Ok(p2 / (1.0 + (fw.n as f64 - 1.0) * (-p2 * t).exp()))
}

/// Variance of the log of the matched lognormal at time `t`:
/// `ln(1 + (e^{phi^2 t} - 1)/n)`.
pub fn fw_log_variance(fw: &FwApproximation, t: f64) -> Result<f64, IndexError> {
    if t < 0.0 {
        return Err(IndexError::NegativeTime(t));
    }
    let p2 = fw.phi * fw.phi;
    Ok(((p2 * t).exp_m1() / fw.n as f64).ln_1p())
}

/// Mean and variance of the `n`-constituent average at time `t`, started at `x0`.
///
/// Both are exact for the average itself and are what the matched lognormal
/// reproduces: mean `x0 e^{psi t}`, variance `(x0^2/n) e^{2 psi t} (e^{phi^2 t} - 1)`.
pub fn zn_law(fw: &FwApproximation, x0: f64, t: f64) -> Result<(f64, f64), IndexError> {
    if !(x0 > 0.0) {
        return Err(IndexError::NonPositiveInitial(x0));
    }
    if t < 0.0 {
        return Err(IndexError::NegativeTime(t));
    }
    let p2 = fw.phi * fw.phi;
    let mean = x0 * (fw.psi * t).exp();
    let var = x0 * x0 / fw.n as f64 * (2.0 * fw.psi * t).exp() * (p2 * t).exp_m1();
    Ok((mean, var))
}
