//! Forward density solves: checkpointed density exports, survival curves,
//! exceedance probabilities, and mean first-passage times.

use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use pension_engine::fpe::{
    exceedance_from_density, initial_density, mfpt_from_survival, solve_fpe_1d_with,
    solve_fpe_2d_with, survival_curve, FpeTrajectory, MfptEstimate, TailHandling,
    DEFAULT_IC_SIGMA,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{fmt, write_csv, Report};

/// Equation to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    /// Two-axis fund and salary accumulation density.
    Fund,
    /// One-axis consumption density with an absorbing floor.
    Consumption,
}

/// Arguments for `pensim solve`.
#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Equation to solve.
    #[arg(long, value_enum)]
    pub target: Target,
    /// Time horizon in years.
    #[arg(long)]
    pub horizon: f64,
    /// Pension-to-consumption ratio (consumption target only).
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Density checkpoint times (fund target; defaults to the horizon).
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<f64>,
    /// Report Pr(fund > threshold) at the final checkpoint (fund only).
    #[arg(long, value_delimiter = ',')]
    pub exceed: Vec<f64>,
    /// Report the mean first-passage time from the survival curve
    /// (consumption only).
    #[arg(long)]
    pub mfpt: bool,
    /// Skip writing density checkpoint CSVs.
    #[arg(long)]
    pub no_density: bool,
}

#[derive(Debug, Serialize)]
struct NamedExceedance {
    threshold: f64,
    raw: f64,
    renormalized: f64,
}

#[derive(Debug, Serialize)]
struct SolveResults {
    target: String,
    horizon: f64,
    ratio: Option<f64>,
    final_mass: f64,
    exceedances: Vec<NamedExceedance>,
    mfpt: Option<MfptEstimate>,
}

fn diagnostics(trajectory: &FpeTrajectory) -> serde_json::Value {
    let final_mass = trajectory.mass_curve.last().map_or(0.0, |&(_, m)| m);
    json!({
        "final_mass": final_mass,
        "leaks_per_axis": trajectory.leaks.per_axis,
        "max_undershoot": trajectory.max_undershoot,
        "max_cell_peclet": trajectory.max_cell_peclet,
        "steps": trajectory.mass_curve.len() - 1,
    })
}

fn density_filename(time: f64) -> String {
    format!("density_t{time}.csv")
}

fn write_checkpoints(trajectory: &FpeTrajectory, out_dir: &Path) -> Result<()> {
    for field in &trajectory.checkpoints {
        let path = out_dir.join(density_filename(field.time));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        field.write_csv(file).context("writing density checkpoint")?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Runs the requested solve and writes checkpoint CSVs plus the summary
/// report.
pub fn run(config: &RunConfig, args: &SolveArgs) -> Result<()> {
    let fw = config.fw()?;
    let constants = config.constants();
    let out_dir = Path::new(&config.out_dir);

    let (target, trajectory, mfpt) = match args.target {
        Target::Fund => {
            let grid = config.joint_grid()?;
            let ic = initial_density(&grid, &[1.0, 1.0], &[DEFAULT_IC_SIGMA, DEFAULT_IC_SIGMA])
                .context("placing the initial density")?;
            let checkpoints =
                if args.checkpoints.is_empty() { vec![args.horizon] } else { args.checkpoints.clone() };
            let trajectory = solve_fpe_2d_with(
                &fw,
                constants.lambda_contrib,
                constants.xi,
                constants.eta,
                &ic,
                args.horizon,
                &checkpoints,
            )
            .context("solving the accumulation equation")?;
            ("fund", trajectory, None)
        }
        Target::Consumption => {
            let Some(ratio) = args.ratio else {
                bail!("--ratio is required for the consumption target");
            };
            let grid = config.consumption_grid()?;
            let trajectory = solve_fpe_1d_with(&fw, ratio, &grid, args.horizon)
                .context("solving the consumption equation")?;
            let curve = survival_curve(&trajectory).context("extracting the survival curve")?;
            let rows: Vec<Vec<String>> =
                curve.iter().map(|&(t, s)| vec![fmt(t), fmt(s)]).collect();
            write_csv(out_dir, "survival.csv", &["t", "survival"], &rows)?;
            let mfpt = args
                .mfpt
                .then(|| mfpt_from_survival(&curve, args.horizon, TailHandling::ExponentialTail));
            ("consumption", trajectory, mfpt)
        }
    };

    if !args.no_density {
        write_checkpoints(&trajectory, out_dir)?;
    }

    let mut exceedances = Vec::new();
    if !args.exceed.is_empty() {
        if target != "fund" {
            bail!("--exceed applies to the fund target only");
        }
        let field = trajectory.checkpoints.last().context("no checkpoint recorded")?;
        for &threshold in &args.exceed {
            let e = exceedance_from_density(field, threshold)
                .with_context(|| format!("integrating Pr(fund > {threshold})"))?;
            exceedances.push(NamedExceedance {
                threshold,
                raw: e.raw,
                renormalized: e.renormalized,
            });
        }
    }

    let results = SolveResults {
        target: target.to_string(),
        horizon: args.horizon,
        ratio: args.ratio,
        final_mass: trajectory.mass_curve.last().map_or(0.0, |&(_, m)| m),
        exceedances,
        mfpt,
    };
    Report::new("solve", config, diagnostics(&trajectory), results).write(out_dir, "solve.json")?;
    Ok(())
}
