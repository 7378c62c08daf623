//! Constants estimation: panel ingestion, price deflation, outlier
//! filtering, surface construction, slice fitting, and the collapse to
//! calibrated constants.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use pension_engine::estimation::{
    build_surfaces, cpi_adjust, extract_constants, filter_outliers, fit_slices, read_panel_csv,
    CoefficientSurface, CpiSeries, Panel, Period,
};
use pension_engine::sde::CalibratedConstants;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{fmt, write_csv, Report};

/// Sampling cadence of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Cadence {
    /// Monthly observations; extracted constants are annualized.
    Month,
    /// Yearly observations; extracted constants are used as-is.
    Year,
}

impl From<Cadence> for Period {
    fn from(cadence: Cadence) -> Period {
        match cadence {
            Cadence::Month => Period::Month,
            Cadence::Year => Period::Year,
        }
    }
}

/// Arguments for `pensim estimate`.
#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Stock growth panel CSV (`id,t,value`); defaults to paths.stock_panel.
    #[arg(long, value_name = "FILE")]
    pub stock_panel: Option<PathBuf>,
    /// Salary growth panel CSV (`id,t,value`); defaults to paths.salary_panel.
    #[arg(long, value_name = "FILE")]
    pub salary_panel: Option<PathBuf>,
    /// Price-index series CSV (`t,index`); defaults to paths.cpi.
    #[arg(long, value_name = "FILE")]
    pub cpi: Option<PathBuf>,
    /// Sampling cadence of the stock panel.
    #[arg(long, value_enum, default_value_t = Cadence::Month)]
    pub stock_period: Cadence,
    /// Sampling cadence of the salary panel.
    #[arg(long, value_enum, default_value_t = Cadence::Year)]
    pub salary_period: Cadence,
    /// Growth-multiple bin width for the stock surface.
    #[arg(long, default_value_t = 0.25)]
    pub stock_bin: f64,
    /// Growth-multiple bin width for the salary surface.
    #[arg(long, default_value_t = 0.5)]
    pub salary_bin: f64,
    /// Trailing moving-average window as a fraction of the slice series.
    #[arg(long, default_value_t = 1.0)]
    pub window_fraction: f64,
    /// Fraction of highest-volatility members dropped before fitting.
    #[arg(long, default_value_t = 0.0)]
    pub vol_drop: f64,
    /// Fraction of highest-terminal-growth members dropped before fitting.
    #[arg(long, default_value_t = 0.0)]
    pub growth_drop: f64,
}

#[derive(Debug, Serialize)]
struct PanelSummary {
    file: String,
    members: usize,
    members_kept: usize,
    bins: usize,
    slices: usize,
}

#[derive(Debug, Serialize)]
struct EstimateResults {
    constants: CalibratedConstants,
    stock: PanelSummary,
    salary: PanelSummary,
}

fn required_path(flag: Option<&PathBuf>, fallback: &str, what: &str) -> Result<PathBuf> {
    match flag {
        Some(path) => Ok(path.clone()),
        None if !fallback.is_empty() => Ok(PathBuf::from(fallback)),
        None => bail!("no {what} given: pass the flag or set it in the config file"),
    }
}

fn bin_rows(surface: &CoefficientSurface) -> Vec<Vec<String>> {
    surface
        .bins
        .iter()
        .map(|(&(t, xb), bin)| {
            vec![
                t.to_string(),
                xb.to_string(),
                fmt(surface.bin_center(xb)),
                fmt(bin.a),
                fmt(bin.b2),
                fmt(bin.mean_x),
                bin.count.to_string(),
            ]
        })
        .collect()
}

fn slice_rows(surface: &CoefficientSurface) -> Vec<Vec<String>> {
    surface
        .slice_fits
        .iter()
        .map(|(&t, fit)| {
            let (q, q2) = fit.drift.map_or((String::new(), String::new()), |d| (fmt(d.q), fmt(d.q2)));
            let (r, r2, r3) = fit.vol.map_or((String::new(), String::new(), String::new()), |v| {
                (fmt(v.r), fmt(v.r2), fmt(v.r3))
            });
            vec![t.to_string(), q, q2, r, r2, r3, fit.bin_count.to_string()]
        })
        .collect()
}

struct FittedPanel {
    surface: CoefficientSurface,
    summary: PanelSummary,
}

fn ingest(
    path: &Path,
    period: Period,
    cpi: &CpiSeries,
    bin_width: f64,
    vol_drop: f64,
    growth_drop: f64,
    what: &str,
) -> Result<FittedPanel> {
    let panel = read_panel_csv(path, period).with_context(|| format!("reading {what} {}", path.display()))?;
    let members = panel.trajectories.len();
    let base = panel.trajectories.iter().map(|tr| tr.t0).min().unwrap_or(0);
    let deflated = cpi_adjust(&panel, cpi, base).with_context(|| format!("deflating {what}"))?;
    let kept: Panel = filter_outliers(&deflated, vol_drop, growth_drop)
        .with_context(|| format!("filtering {what}"))?;
    let members_kept = kept.trajectories.len();
    let surface = fit_slices(build_surfaces(&kept, bin_width).with_context(|| format!("binning {what}"))?);
    let summary = PanelSummary {
        file: path.display().to_string(),
        members,
        members_kept,
        bins: surface.bins.len(),
        slices: surface.slice_fits.len(),
    };
    Ok(FittedPanel { surface, summary })
}

/// Runs the full estimation pipeline and writes the constants report plus
/// surface and slice CSVs for both panels.
pub fn run(config: &RunConfig, args: &EstimateArgs) -> Result<()> {
    let stock_path = required_path(args.stock_panel.as_ref(), &config.paths.stock_panel, "stock panel")?;
    let salary_path =
        required_path(args.salary_panel.as_ref(), &config.paths.salary_panel, "salary panel")?;
    let cpi_path = required_path(args.cpi.as_ref(), &config.paths.cpi, "price-index series")?;
    let cpi = CpiSeries::from_csv_path(&cpi_path)
        .with_context(|| format!("reading price index {}", cpi_path.display()))?;

    let stock = ingest(
        &stock_path,
        args.stock_period.into(),
        &cpi,
        args.stock_bin,
        args.vol_drop,
        args.growth_drop,
        "stock panel",
    )?;
    let salary = ingest(
        &salary_path,
        args.salary_period.into(),
        &cpi,
        args.salary_bin,
        args.vol_drop,
        args.growth_drop,
        "salary panel",
    )?;

    let constants = extract_constants(&stock.surface, &salary.surface, args.window_fraction)
        .context("collapsing surfaces to constants")?;

    let out_dir = Path::new(&config.out_dir);
    let bin_header = ["t", "x_bin", "x_center", "a", "b2", "mean_x", "count"];
    let slice_header = ["t", "q", "q2", "r", "r2", "r3", "bin_count"];
    write_csv(out_dir, "stock_bins.csv", &bin_header, &bin_rows(&stock.surface))?;
    write_csv(out_dir, "stock_slices.csv", &slice_header, &slice_rows(&stock.surface))?;
    write_csv(out_dir, "salary_bins.csv", &bin_header, &bin_rows(&salary.surface))?;
    write_csv(out_dir, "salary_slices.csv", &slice_header, &slice_rows(&salary.surface))?;

    let diagnostics = json!({
        "window_fraction": args.window_fraction,
        "vol_drop": args.vol_drop,
        "growth_drop": args.growth_drop,
        "stock_bin": args.stock_bin,
        "salary_bin": args.salary_bin,
    });
    let results = EstimateResults { constants, stock: stock.summary, salary: salary.summary };
    Report::new("estimate", config, diagnostics, results).write(out_dir, "constants.json")?;
    Ok(())
}
