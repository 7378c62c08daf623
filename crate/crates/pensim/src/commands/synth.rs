//! Synthetic fixture generation: a seeded geometric-Brownian growth panel
//! plus a matching consumer-price-index series.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use pension_engine::estimation::{synthetic_panel, Panel, Period, SyntheticConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{fmt, write_csv, Report};

/// Arguments for `pensim synth`.
#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Member count.
    #[arg(long, default_value_t = 5000)]
    pub n_paths: usize,
    /// Observations per member after inclusion.
    #[arg(long, default_value_t = 504)]
    pub n_periods: usize,
    /// Per-period drift of the generated panel.
    #[arg(long, default_value_t = 0.002742)]
    pub drift: f64,
    /// Per-period volatility of the generated panel; zero gives a flat panel.
    #[arg(long, default_value_t = 0.1)]
    pub vol: f64,
    /// Per-period growth rate of the generated price index.
    #[arg(long, default_value_t = 0.0)]
    pub cpi_rate: f64,
    /// Periods the price index covers; defaults to the panel span. Shorter
    /// coverage produces a deliberately broken deflation fixture.
    #[arg(long)]
    pub cpi_periods: Option<usize>,
    /// Panel output filename within the output directory.
    #[arg(long, default_value = "panel.csv")]
    pub panel_out: String,
    /// Price-index output filename within the output directory.
    #[arg(long, default_value = "cpi.csv")]
    pub cpi_out: String,
}

#[derive(Debug, Serialize)]
struct SynthResults {
    panel_file: String,
    cpi_file: String,
    n_paths: usize,
    n_periods: usize,
    drift: f64,
    vol: f64,
    cpi_rate: f64,
    cpi_periods: usize,
}

fn panel_rows(panel: &Panel) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for tr in &panel.trajectories {
        for (k, &value) in tr.values.iter().enumerate() {
            rows.push(vec![tr.id.clone(), (tr.t0 + k as i64).to_string(), fmt(value)]);
        }
    }
    rows
}

/// Generates the panel and price-index fixtures.
pub fn run(config: &RunConfig, args: &SynthArgs) -> Result<()> {
    let synth = SyntheticConfig {
        n_paths: args.n_paths,
        horizon: args.n_periods,
        drift: args.drift,
        vol: args.vol,
        seed: config.seed,
    };
    let panel = synthetic_panel(&synth, Period::Month).context("generating the panel")?;
    let out_dir = Path::new(&config.out_dir);
    write_csv(out_dir, &args.panel_out, &["id", "t", "value"], &panel_rows(&panel))?;

    let cpi_periods = args.cpi_periods.unwrap_or(args.n_periods);
    let cpi_rows: Vec<Vec<String>> = (0..=cpi_periods as i64)
        .map(|t| vec![t.to_string(), fmt((1.0 + args.cpi_rate).powi(t as i32))])
        .collect();
    write_csv(out_dir, &args.cpi_out, &["t", "index"], &cpi_rows)?;

    let results = SynthResults {
        panel_file: args.panel_out.clone(),
        cpi_file: args.cpi_out.clone(),
        n_paths: args.n_paths,
        n_periods: args.n_periods,
        drift: args.drift,
        vol: args.vol,
        cpi_rate: args.cpi_rate,
        cpi_periods,
    };
    Report::new("synth", config, serde_json::Value::Null, results).write(out_dir, "synth.json")?;
    Ok(())
}
