//! Solver-versus-simulation consistency checks with explicit tolerances.
//! The command exits nonzero when a check fails.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use pension_engine::fpe::{
    mfpt_from_survival, solve_fpe_1d_with, survival_at, survival_curve, Grid, TailHandling,
};
use pension_engine::index::FwApproximation;
use pension_engine::mc::{mc_estimate, simulate_consumption_with, Functional, McEstimate};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::Report;

/// Tolerance on solver-versus-simulation depletion times, in years.
const MFPT_TOLERANCE: f64 = 0.5;
/// Floor of the probability tolerance; the effective tolerance is
/// max(this, 3 standard errors).
const PROBABILITY_TOLERANCE: f64 = 0.015;

/// Arguments for `pensim crosscheck`.
#[derive(Debug, Args)]
pub struct CrosscheckArgs {
    #[command(subcommand)]
    pub case: CrosscheckCase,
}

/// Which consistency check to run.
#[derive(Debug, Subcommand)]
pub enum CrosscheckCase {
    /// Deterministic pure-drain depletion: both sides must report the ratio.
    Drain {
        /// Pension-to-consumption ratio; depletion occurs at exactly this
        /// many years.
        #[arg(long, default_value_t = 7.5)]
        ratio: f64,
        /// Coarsen the solver spacing by this factor.
        #[arg(long, default_value_t = 1)]
        coarsen: usize,
    },
    /// Stochastic survival probability at a time point.
    Survival {
        /// Pension-to-consumption ratio.
        #[arg(long, default_value_t = 10.0)]
        ratio: f64,
        /// Evaluation time in years.
        #[arg(long, default_value_t = 10.0)]
        at: f64,
        /// Coarsen the solver spacing by this factor; a factor of 8 is the
        /// documented tolerance-failure demonstration.
        #[arg(long, default_value_t = 1)]
        coarsen: usize,
    },
}

#[derive(Debug, Serialize)]
struct CrosscheckResults {
    case: String,
    ratio: f64,
    solver: f64,
    simulation: f64,
    simulation_std_error: f64,
    difference: f64,
    tolerance: f64,
    pass: bool,
}

fn coarsened(grid: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 {
        bail!("--coarsen must be positive");
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let spacing = grid.spacings[0] * factor as f64;
    let cells = (grid.counts[0] / factor).max(3);
    Grid::new_1d(spacing, cells, grid.dk).context("building the coarsened grid")
}

fn scalar(estimate: McEstimate) -> Result<(f64, f64)> {
    match estimate {
        McEstimate::Scalar { value, std_error, .. } => Ok((value, std_error)),
        McEstimate::Curve { .. } => bail!("expected a scalar estimate"),
    }
}

/// Runs the requested check; returns whether it passed.
pub fn run(config: &RunConfig, args: &CrosscheckArgs) -> Result<bool> {
    let out_dir = Path::new(&config.out_dir);
    let (results, diagnostics, filename) = match args.case {
        CrosscheckCase::Drain { ratio, coarsen } => {
            if !(ratio > 0.0) {
                bail!("--ratio must be positive, got {ratio}");
            }
            // Pure drain: no drift, no noise, one constituent. A unit fund
            // consumed at rate 1/ratio empties at exactly t = ratio.
            let fw = FwApproximation::new(0.0, 0.0, 1).context("building the drain model")?;
            let horizon = ratio + 2.0;
            let grid = coarsened(&config.consumption_grid()?, coarsen)?;
            let trajectory = solve_fpe_1d_with(&fw, ratio, &grid, horizon)
                .context("solving the drain equation")?;
            let curve = survival_curve(&trajectory)?;
            let solver = mfpt_from_survival(&curve, horizon, TailHandling::Truncate).value;

            let ensemble = simulate_consumption_with(&fw, ratio, &config.euler(horizon))
                .context("simulating the drain")?;
            let (simulation, se) = scalar(mc_estimate(&ensemble, &Functional::Mfpt)?)?;

            let difference = (solver - simulation).abs();
            let pass = difference <= MFPT_TOLERANCE;
            let results = CrosscheckResults {
                case: "drain".to_string(),
                ratio,
                solver,
                simulation,
                simulation_std_error: se,
                difference,
                tolerance: MFPT_TOLERANCE,
                pass,
            };
            let diagnostics = json!({
                "expected_depletion": ratio,
                "grid_spacing": grid.spacings[0],
                "final_mass": trajectory.mass_curve.last().map_or(0.0, |&(_, m)| m),
            });
            println!(
                "drain mfpt: solver {solver:.4} simulation {simulation:.4} \
                 (se {se:.4}) tolerance {MFPT_TOLERANCE} -> {}",
                if pass { "PASS" } else { "FAIL" }
            );
            (results, diagnostics, "crosscheck_drain.json")
        }
        CrosscheckCase::Survival { ratio, at, coarsen } => {
            if !(ratio > 0.0) {
                bail!("--ratio must be positive, got {ratio}");
            }
            if !(at > 0.0) {
                bail!("--at must be positive, got {at}");
            }
            let fw = config.fw()?;
            let grid = coarsened(&config.consumption_grid()?, coarsen)?;
            let trajectory =
                solve_fpe_1d_with(&fw, ratio, &grid, at).context("solving the consumption equation")?;
            let solver = survival_at(&survival_curve(&trajectory)?, at);

            let ensemble = simulate_consumption_with(&fw, ratio, &config.euler(at))
                .context("simulating consumption")?;
            let (simulation, se) = scalar(mc_estimate(&ensemble, &Functional::SurvivalAt(at))?)?;

            let tolerance = PROBABILITY_TOLERANCE.max(3.0 * se);
            let difference = (solver - simulation).abs();
            let pass = difference <= tolerance;
            let results = CrosscheckResults {
                case: "survival".to_string(),
                ratio,
                solver,
                simulation,
                simulation_std_error: se,
                difference,
                tolerance,
                pass,
            };
            let diagnostics = json!({
                "at": at,
                "grid_spacing": grid.spacings[0],
                "final_mass": trajectory.mass_curve.last().map_or(0.0, |&(_, m)| m),
            });
            println!(
                "survival at {at}: solver {solver:.4} simulation {simulation:.4} \
                 (se {se:.4}) tolerance {tolerance:.4} -> {}",
                if pass { "PASS" } else { "FAIL" }
            );
            (results, diagnostics, "crosscheck_survival.json")
        }
    };
    let pass = results.pass;
    Report::new("crosscheck", config, diagnostics, results).write(out_dir, filename)?;
    Ok(pass)
}
