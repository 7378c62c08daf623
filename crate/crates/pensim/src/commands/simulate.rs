//! Path-ensemble simulation with functional estimates: terminal exceedance
//! probabilities, survival probabilities, and mean first-passage times.

use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use pension_engine::mc::{
    mc_estimate, simulate_consumption_with, simulate_fund_with, simulate_index_average, Functional,
    McEstimate, PathEnsemble,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::Report;

/// Process to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Process {
    /// Joint fund and salary accumulation.
    Fund,
    /// Scaled retirement consumption with absorption at zero.
    Consumption,
    /// Equal-weight average of independent constituents.
    Index,
}

/// Arguments for `pensim simulate`.
#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Process to simulate.
    #[arg(long, value_enum)]
    pub process: Process,
    /// Time horizon in years.
    #[arg(long)]
    pub horizon: f64,
    /// Pension-to-consumption ratio (consumption process only).
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Report Pr(terminal value > v) for each threshold.
    #[arg(long, value_delimiter = ',')]
    pub exceed: Vec<f64>,
    /// Report survival probabilities at these times (consumption only).
    #[arg(long, value_delimiter = ',')]
    pub survival_at: Vec<f64>,
    /// Report the mean first-passage time (consumption only).
    #[arg(long)]
    pub mfpt: bool,
    /// Write the recorded ensemble as a `path,t,value` CSV.
    #[arg(long)]
    pub ensemble_csv: bool,
}

#[derive(Debug, Serialize)]
struct NamedEstimate {
    name: String,
    estimate: McEstimate,
}

#[derive(Debug, Serialize)]
struct SimulateResults {
    process: String,
    horizon: f64,
    ratio: Option<f64>,
    estimates: Vec<NamedEstimate>,
}

fn terminal_mean(ensemble: &PathEnsemble) -> McEstimate {
    let terminal = ensemble.terminal();
    let n = terminal.len() as f64;
    let mean = terminal.iter().sum::<f64>() / n;
    let var = terminal.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    McEstimate::Scalar {
        value: mean,
        std_error: (var / n).sqrt(),
        n_paths: terminal.len(),
        censored_fraction: 0.0,
    }
}

/// Runs the requested simulation and reports the functional estimates.
pub fn run(config: &RunConfig, args: &SimulateArgs) -> Result<()> {
    let euler = config.euler(args.horizon);
    let fw = config.fw()?;
    let constants = config.constants();
    let (name, ensemble) = match args.process {
        Process::Fund => {
            let ens =
                simulate_fund_with(&fw, constants.lambda_contrib, constants.xi, constants.eta, &euler)
                    .context("simulating the fund")?;
            ("fund", ens)
        }
        Process::Consumption => {
            let Some(ratio) = args.ratio else {
                bail!("--ratio is required for the consumption process");
            };
            let ens = simulate_consumption_with(&fw, ratio, &euler)
                .context("simulating consumption")?;
            ("consumption", ens)
        }
        Process::Index => {
            let ens = simulate_index_average(config.constants.n_constituents, &constants, &euler)
                .context("simulating the index average")?;
            ("index", ens)
        }
    };

    let mut estimates = vec![NamedEstimate {
        name: "terminal_mean".to_string(),
        estimate: terminal_mean(&ensemble),
    }];
    for &threshold in &args.exceed {
        let estimate = mc_estimate(&ensemble, &Functional::Exceedance(threshold))
            .with_context(|| format!("estimating Pr(value > {threshold})"))?;
        estimates.push(NamedEstimate { name: format!("exceedance_{threshold}"), estimate });
    }
    for &t in &args.survival_at {
        let estimate = mc_estimate(&ensemble, &Functional::SurvivalAt(t))
            .with_context(|| format!("estimating survival at {t}"))?;
        estimates.push(NamedEstimate { name: format!("survival_at_{t}"), estimate });
    }
    if args.mfpt {
        let estimate = mc_estimate(&ensemble, &Functional::Mfpt)
            .context("estimating the mean first-passage time")?;
        estimates.push(NamedEstimate { name: "mfpt".to_string(), estimate });
    }

    let out_dir = Path::new(&config.out_dir);
    if args.ensemble_csv {
        let path = out_dir.join("ensemble.csv");
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        ensemble.write_csv(file).context("writing the ensemble")?;
        println!("wrote {}", path.display());
    }

    let diagnostics = json!({
        "clamped_steps": ensemble.clamped_steps,
        "recorded_times": ensemble.times.len(),
        "dt": euler.dt,
        "n_paths": euler.n_paths,
        "antithetic": euler.antithetic,
    });
    let results = SimulateResults {
        process: name.to_string(),
        horizon: args.horizon,
        ratio: args.ratio,
        estimates,
    };
    Report::new("simulate", config, diagnostics, results).write(out_dir, "simulate.json")?;
    Ok(())
}
