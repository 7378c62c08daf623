//! Euler-Maruyama simulation engine and Monte Carlo estimators.
//!
//! Every probability, survival curve, and mean first-passage time produced by
//! the density solvers has an independent oracle here: simulate the same SDE
//! pathwise and estimate the functional with a standard error. Paths use one
//! RNG stream per path index, so results are identical across thread counts
//! and reproducible from the seed alone.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{fw_phi_squared, FwApproximation, DEFAULT_CONSTITUENTS};
use crate::sde::{CalibratedConstants, LinearSdeCoefficients};

#[derive(Debug, Error)]
pub enum McError {
    #[error("dt must be positive (got {0})")]
    BadStep(f64),
    #[error("horizon must be at least one step (dt {dt}, horizon {horizon})")]
    ShortHorizon { dt: f64, horizon: f64 },
    #[error("need at least one path")]
    NoPaths,
    #[error("antithetic sampling needs an even path count (got {0})")]
    OddAntithetic(usize),
    #[error("constituent count must be positive")]
    ZeroConstituents,
    #[error("ratio must be positive (got {0})")]
    NonPositiveRatio(f64),
    #[error("initial value must be positive (got {0})")]
    NonPositiveInitial(f64),
    #[error("ensemble records no first-passage times; survival and MFPT need an absorbing simulation")]
    NoFirstPassage,
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("index model error: {0}")]
    Index(#[from] crate::index::IndexError),
}

/// Euler scheme configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerConfig {
    /// Time step (years).
    pub dt: f64,
    /// Total simulated time (years); rounded to a whole number of steps.
    pub horizon: f64,
    /// Number of paths.
    pub n_paths: usize,
    /// RNG seed; fixing it fixes every path bit-for-bit.
    pub seed: u64,
    /// Use antithetic pairs (path 2k+1 negates the draws of path 2k).
    pub antithetic: bool,
}

impl EulerConfig {
    /// Checks dt > 0, horizon >= dt, n_paths >= 1, and that antithetic
    /// sampling gets an even path count.
    pub fn validate(&self) -> Result<(), McError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(McError::BadStep(self.dt));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(McError::ShortHorizon { dt: self.dt, horizon: self.horizon });
        }
        if self.n_paths == 0 {
            return Err(McError::NoPaths);
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(McError::OddAntithetic(self.n_paths));
        }
        Ok(())
    }

    fn n_steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }
}

/// A simulated ensemble: recorded values per path on a common time grid.
///
/// Absorbing simulations also carry per-path first-passage times; joint fund
/// simulations carry the salary component alongside the fund component.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    /// Recorded times (a subset of integration steps for long joint runs).
    pub times: Vec<f64>,
    /// Recorded values, row per path, column per recorded time.
    pub paths: Array2<f64>,
    /// Salary component of joint fund paths, same layout.
    pub salary_paths: Option<Array2<f64>>,
    /// First time each path was absorbed, when the simulation absorbs.
    pub first_passage: Option<Vec<Option<f64>>>,
    /// Euler steps clamped by the positivity guard.
    pub clamped_steps: u64,
    /// Generating configuration.
    pub config: EulerConfig,
}

impl PathEnsemble {
    /// Values at the last recorded time.
    pub fn terminal(&self) -> Vec<f64> {
        let last = self.paths.ncols() - 1;
        self.paths.column(last).to_vec()
    }

    /// Writes the ensemble as `path,t,value` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "t", "value"])?;
        for (p, row) in self.paths.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w.write_record(&[p.to_string(), self.times[j].to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One RNG per path: a fixed seed plus the path index as the stream number.
/// Antithetic pairs share a stream and the odd member negates every draw.
fn path_rng(seed: u64, path: usize, antithetic: bool) -> (ChaCha8Rng, f64) {
    let (stream, sign) = if antithetic {
        ((path / 2) as u64, if path % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        (path as u64, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (rng, sign)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Simulates `dx = (a1 x + a2) dt + (b1 x + b2) dw` by the Euler scheme,
/// recording every step.
///
/// When the noise is purely multiplicative (`b2 = 0`) and the drift offset is
/// non-negative, the exact solution stays positive, so a step landing at or
/// below zero is floored at 1e-12 and counted. Otherwise zero crossings are
/// legitimate and the scheme leaves them alone.
pub fn euler_paths(
    coeffs: &LinearSdeCoefficients,
    x0: f64,
    config: &EulerConfig,
) -> Result<PathEnsemble, McError> {
    config.validate()?;
    let n_steps = config.n_steps();
    let dt = config.dt;
    let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    let sqrt_dt = dt.sqrt();

    // precompute per-step coefficient values (left endpoints)
    let a1: Vec<f64> = times[..n_steps].iter().map(|&t| coeffs.a1.value_at(t)).collect();
    let a2: Vec<f64> = times[..n_steps].iter().map(|&t| coeffs.a2.value_at(t)).collect();
    let b1: Vec<f64> = times[..n_steps].iter().map(|&t| coeffs.b1.value_at(t)).collect();
    let b2: Vec<f64> = times[..n_steps].iter().map(|&t| coeffs.b2.value_at(t)).collect();
    let guard = coeffs.b2.is_zero() && a2.iter().all(|&v| v >= 0.0);

    let rows: Vec<(Vec<f64>, u64)> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let (mut rng, sign) = path_rng(config.seed, p, config.antithetic);
            let mut row = Vec::with_capacity(n_steps + 1);
            let mut clamps = 0u64;
            let mut x = x0;
            row.push(x);
            for k in 0..n_steps {
                let dw = sign * standard_normal(&mut rng) * sqrt_dt;
                x += (a1[k] * x + a2[k]) * dt + (b1[k] * x + b2[k]) * dw;
                if guard && x <= 0.0 {
                    x = 1e-12;
                    clamps += 1;
                }
                row.push(x);
            }
            (row, clamps)
        })
        .collect();

    let mut paths = Array2::zeros((config.n_paths, n_steps + 1));
    let mut clamped_steps = 0;
    for (p, (row, clamps)) in rows.into_iter().enumerate() {
        paths.row_mut(p).assign(&ndarray::Array1::from(row));
        clamped_steps += clamps;
    }
    Ok(PathEnsemble {
        times,
        paths,
        salary_paths: None,
        first_passage: None,
        clamped_steps,
        config: config.clone(),
    })
}

/// Simulates the equal-weight average of `n_constituents` independent
/// exponential Brownian motions with the calibrated drift and volatility.
/// Each output path advances all constituents in lockstep and records only
/// their average.
pub fn simulate_index_average(
    n_constituents: usize,
    constants: &CalibratedConstants,
    config: &EulerConfig,
) -> Result<PathEnsemble, McError> {
    config.validate()?;
    if n_constituents == 0 {
        return Err(McError::ZeroConstituents);
    }
    let n_steps = config.n_steps();
    let dt = config.dt;
    let sqrt_dt = dt.sqrt();
    let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    let (psi, phi) = (constants.psi, constants.phi);

    let rows: Vec<(Vec<f64>, u64)> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let (mut rng, sign) = path_rng(config.seed, p, config.antithetic);
            let mut stocks = vec![1.0_f64; n_constituents];
            let mut clamps = 0u64;
            let mut row = Vec::with_capacity(n_steps + 1);
            row.push(1.0);
            for _ in 0..n_steps {
                let mut sum = 0.0;
                for x in stocks.iter_mut() {
                    let dw = sign * standard_normal(&mut rng) * sqrt_dt;
                    *x += psi * *x * dt + phi * *x * dw;
                    if *x <= 0.0 {
                        *x = 1e-12;
                        clamps += 1;
                    }
                    sum += *x;
                }
                row.push(sum / n_constituents as f64);
            }
            (row, clamps)
        })
        .collect();

    let mut paths = Array2::zeros((config.n_paths, n_steps + 1));
    let mut clamped_steps = 0;
    for (p, (row, clamps)) in rows.into_iter().enumerate() {
        paths.row_mut(p).assign(&ndarray::Array1::from(row));
        clamped_steps += clamps;
    }
    Ok(PathEnsemble {
        times,
        paths,
        salary_paths: None,
        first_passage: None,
        clamped_steps,
        config: config.clone(),
    })
}

/// Recording stride for long joint runs: roughly one column per year, so a
/// 200k-path simulation fits in memory while integration stays at `dt`.
fn record_stride(dt: f64, n_steps: usize) -> usize {
    let per_year = (1.0 / dt).round() as usize;
    per_year.clamp(1, n_steps)
}

/// Simulates the joint fund/salary system with independent Brownian drivers:
///
/// ```text
/// dv = (psi v + lambda s) dt + Phi(t) v dW
/// ds = xi s dt + eta s dw
/// ```
///
/// with `v(0) = s(0) = 1` and `Phi(t)` the effective index volatility for
/// `n_constituents` stocks. Values are recorded roughly once per simulated
/// year; integration always proceeds at `config.dt`.
pub fn simulate_fund(
    constants: &CalibratedConstants,
    config: &EulerConfig,
) -> Result<PathEnsemble, McError> {
    let fw = FwApproximation::new(constants.psi, constants.phi, DEFAULT_CONSTITUENTS)?;
    simulate_fund_with(&fw, constants.lambda_contrib, constants.xi, constants.eta, config)
}

/// Fund/salary simulation with an explicit index approximation, for oracles
/// that need a different constituent count (n = 1 gives constant volatility).
pub fn simulate_fund_with(
    fw: &FwApproximation,
    lambda: f64,
    xi: f64,
    eta: f64,
    config: &EulerConfig,
) -> Result<PathEnsemble, McError> {
    config.validate()?;
    let n_steps = config.n_steps();
    let dt = config.dt;
    let sqrt_dt = dt.sqrt();
    let stride = record_stride(dt, n_steps);
    let psi = fw.psi;

    // per-step effective volatility at left endpoints
    let mut phi_t = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        phi_t.push(fw_phi_squared(fw, k as f64 * dt)?.sqrt());
    }

    let mut rec_idx: Vec<usize> = (0..=n_steps).step_by(stride).collect();
    if *rec_idx.last().unwrap() != n_steps {
        rec_idx.push(n_steps);
    }
    let times: Vec<f64> = rec_idx.iter().map(|&i| i as f64 * dt).collect();
    let n_rec = rec_idx.len();

    let rows: Vec<(Vec<f64>, Vec<f64>, u64)> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let (mut rng, sign) = path_rng(config.seed, p, config.antithetic);
            let mut v = 1.0_f64;
            let mut s = 1.0_f64;
            let mut clamps = 0u64;
            let mut v_row = Vec::with_capacity(n_rec);
            let mut s_row = Vec::with_capacity(n_rec);
            v_row.push(v);
            s_row.push(s);
            let mut next_rec = 1;
            for k in 0..n_steps {
                let dw_v = sign * standard_normal(&mut rng) * sqrt_dt;
                let dw_s = sign * standard_normal(&mut rng) * sqrt_dt;
                v += (psi * v + lambda * s) * dt + phi_t[k] * v * dw_v;
                s += xi * s * dt + eta * s * dw_s;
                if v <= 0.0 {
                    v = 1e-12;
                    clamps += 1;
                }
                if s <= 0.0 {
                    s = 1e-12;
                    clamps += 1;
                }
                if next_rec < n_rec && k + 1 == rec_idx[next_rec] {
                    v_row.push(v);
                    s_row.push(s);
                    next_rec += 1;
                }
            }
            (v_row, s_row, clamps)
        })
        .collect();

    let mut paths = Array2::zeros((config.n_paths, n_rec));
    let mut salary = Array2::zeros((config.n_paths, n_rec));
    let mut clamped_steps = 0;
    for (p, (v_row, s_row, clamps)) in rows.into_iter().enumerate() {
        paths.row_mut(p).assign(&ndarray::Array1::from(v_row));
        salary.row_mut(p).assign(&ndarray::Array1::from(s_row));
        clamped_steps += clamps;
    }
    Ok(PathEnsemble {
        times,
        paths,
        salary_paths: Some(salary),
        first_passage: None,
        clamped_steps,
        config: config.clone(),
    })
}

/// Simulates retirement consumption in scaled units `x = V/V_r`, starting at
/// 1 and draining at rate `1/ratio`:
///
/// ```text
/// dx = (psi x - 1/ratio) dt + Phi(t) x dW
/// ```
///
/// A path reaching 0 is absorbed: frozen at 0 with its first-passage time
/// recorded (end of the crossing step). `ratio` may be infinite, in which
/// case nothing drains and nothing is absorbed.
pub fn simulate_consumption(
    constants: &CalibratedConstants,
    ratio: f64,
    config: &EulerConfig,
) -> Result<PathEnsemble, McError> {
    let fw = FwApproximation::new(constants.psi, constants.phi, DEFAULT_CONSTITUENTS)?;
    simulate_consumption_with(&fw, ratio, config)
}

/// Consumption simulation with an explicit index approximation.
pub fn simulate_consumption_with(
    fw: &FwApproximation,
    ratio: f64,
    config: &EulerConfig,
) -> Result<PathEnsemble, McError> {
    config.validate()?;
    if !(ratio > 0.0) {
        return Err(McError::NonPositiveRatio(ratio));
    }
    let n_steps = config.n_steps();
    let dt = config.dt;
    let sqrt_dt = dt.sqrt();
    let stride = record_stride(dt, n_steps);
    let psi = fw.psi;
    let drain = 1.0 / ratio; // zero when ratio is infinite

    let mut phi_t = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        phi_t.push(fw_phi_squared(fw, k as f64 * dt)?.sqrt());
    }

    let mut rec_idx: Vec<usize> = (0..=n_steps).step_by(stride).collect();
    if *rec_idx.last().unwrap() != n_steps {
        rec_idx.push(n_steps);
    }
    let times: Vec<f64> = rec_idx.iter().map(|&i| i as f64 * dt).collect();
    let n_rec = rec_idx.len();

    let rows: Vec<(Vec<f64>, Option<f64>)> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let (mut rng, sign) = path_rng(config.seed, p, config.antithetic);
            let mut x = 1.0_f64;
            let mut fpt = None;
            let mut row = Vec::with_capacity(n_rec);
            row.push(x);
            let mut next_rec = 1;
            for k in 0..n_steps {
                if fpt.is_none() {
                    let dw = sign * standard_normal(&mut rng) * sqrt_dt;
                    x += (psi * x - drain) * dt + phi_t[k] * x * dw;
                    if x <= 0.0 {
                        x = 0.0;
                        fpt = Some((k + 1) as f64 * dt);
                    }
                }
                if next_rec < n_rec && k + 1 == rec_idx[next_rec] {
                    row.push(x);
                    next_rec += 1;
                }
            }
            (row, fpt)
        })
        .collect();

    let mut paths = Array2::zeros((config.n_paths, n_rec));
    let mut first_passage = Vec::with_capacity(config.n_paths);
    for (p, (row, fpt)) in rows.into_iter().enumerate() {
        paths.row_mut(p).assign(&ndarray::Array1::from(row));
        first_passage.push(fpt);
    }
    Ok(PathEnsemble {
        times,
        paths,
        salary_paths: None,
        first_passage: Some(first_passage),
        clamped_steps: 0,
        config: config.clone(),
    })
}

/// Functional to estimate from an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// Probability that the terminal value exceeds the threshold.
    Exceedance(f64),
    /// Fraction of paths not yet absorbed at the given time.
    SurvivalAt(f64),
    /// Mean first-passage time; censored paths contribute the horizon.
    Mfpt,
    /// Empirical CDF of the terminal value on a grid of thresholds.
    CdfGrid(Vec<f64>),
}

/// One point of an estimated curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Grid value the estimate refers to.
    pub x: f64,
    /// Estimated probability.
    pub value: f64,
    /// Binomial standard error.
    pub std_error: f64,
}

/// Monte Carlo estimate of a functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum McEstimate {
    Scalar {
        value: f64,
        std_error: f64,
        n_paths: usize,
        /// Fraction of paths censored at the horizon (MFPT only; 0 otherwise).
        censored_fraction: f64,
    },
    Curve {
        points: Vec<CurvePoint>,
    },
}

impl McEstimate {
    /// The scalar value, if this is a scalar estimate.
    pub fn value(&self) -> Option<f64> {
        match self {
            McEstimate::Scalar { value, .. } => Some(*value),
            McEstimate::Curve { .. } => None,
        }
    }
}

fn binomial_scalar(hits: usize, n: usize) -> McEstimate {
    let p = hits as f64 / n as f64;
    McEstimate::Scalar {
        value: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        n_paths: n,
        censored_fraction: 0.0,
    }
}

/// Estimates a functional from an ensemble, with a standard error.
///
/// Survival and MFPT need recorded first-passage times; exceedance and CDF
/// grids use terminal values. Estimates reduce sequentially over paths, so
/// the result does not depend on thread count.
pub fn mc_estimate(ensemble: &PathEnsemble, functional: &Functional) -> Result<McEstimate, McError> {
    let n = ensemble.paths.nrows();
    if n == 0 {
        return Err(McError::EmptyEnsemble);
    }
    match functional {
        Functional::Exceedance(y) => {
            let hits = ensemble.terminal().iter().filter(|&&v| v > *y).count();
            Ok(binomial_scalar(hits, n))
        }
        Functional::CdfGrid(grid) => {
            let mut terminal = ensemble.terminal();
            terminal.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let points = grid
                .iter()
                .map(|&x| {
                    let below = terminal.partition_point(|&v| v <= x);
                    let p = below as f64 / n as f64;
                    CurvePoint { x, value: p, std_error: (p * (1.0 - p) / n as f64).sqrt() }
                })
                .collect();
            Ok(McEstimate::Curve { points })
        }
        Functional::SurvivalAt(t) => {
            let fpt = ensemble.first_passage.as_ref().ok_or(McError::NoFirstPassage)?;
            let alive = fpt.iter().filter(|f| f.map_or(true, |tau| tau > *t)).count();
            Ok(binomial_scalar(alive, n))
        }
        Functional::Mfpt => {
            let fpt = ensemble.first_passage.as_ref().ok_or(McError::NoFirstPassage)?;
            let horizon = *ensemble.times.last().unwrap();
            let mut censored = 0usize;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for f in fpt {
                let tau = match f {
                    Some(tau) => *tau,
                    None => {
                        censored += 1;
                        horizon
                    }
                };
                sum += tau;
                sum_sq += tau * tau;
            }
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            Ok(McEstimate::Scalar {
                value: mean,
                std_error: (var / n as f64).sqrt(),
                n_paths: n,
                censored_fraction: censored as f64 / n as f64,
            })
        }
    }
}
