//! Reference-table generation: pension-size probabilities, consumption
//! survival, mean depletion times, and mortality-weighted survival.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use pension_engine::pension::{
    consumption_survival_table, mfpt_table, pension_size_table, prob_pension_outlives, LifeTable,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{fmt, write_csv, Report};

/// Target ratios of the published 25-year pension table.
const PENSION_25_RATIOS: [f64; 8] = [3.11, 3.33, 3.55, 4.00, 4.44, 5.00, 5.83, 6.67];
/// Target ratios of the published 40-year pension table.
const PENSION_40_RATIOS: [f64; 7] = [5.00, 6.50, 7.00, 7.50, 9.50, 11.00, 15.00];
/// Consumption ratios shared by the published depletion and mortality tables.
const CONSUMPTION_RATIOS: [f64; 6] = [7.5, 10.0, 12.0, 12.5, 15.0, 16.25];

/// Retirement lengths of the published survival tables, per ratio.
fn published_survival_years(ratio: f64) -> Option<Vec<u32>> {
    let close = |x: f64| (ratio - x).abs() < 1e-9;
    if close(7.5) {
        Some(vec![8, 9, 10, 11])
    } else if close(10.0) {
        Some((10..=15).collect())
    } else if close(12.0) {
        Some((13..=18).collect())
    } else if close(12.5) {
        Some((13..=20).collect())
    } else if close(15.0) {
        Some(vec![15, 20, 25, 30])
    } else if close(16.25) {
        Some(vec![20, 25, 30, 35])
    } else {
        None
    }
}

/// Arguments for `pensim tables`.
#[derive(Debug, Args)]
pub struct TablesArgs {
    #[command(subcommand)]
    pub kind: TableKind,
}

/// Which reference table to generate.
#[derive(Debug, Subcommand)]
pub enum TableKind {
    /// Pension-size probabilities after a fixed saving period.
    Pension {
        /// Saving period in years.
        #[arg(long)]
        years: u32,
        /// Comma-separated target ratios; defaults to the published set for
        /// 25 or 40 years. An empty string produces an empty table.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Fund survival probabilities over retirement lengths.
    Survival {
        /// Initial-pension-to-consumption ratio.
        #[arg(long)]
        ratio: f64,
        /// Comma-separated retirement lengths in years; defaults to the
        /// published set when the ratio has one.
        #[arg(long)]
        years: Option<String>,
    },
    /// Mean depletion times per consumption ratio.
    Mfpt {
        /// Comma-separated consumption ratios; defaults to the published set.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Probability that the pension outlives the pensioner.
    Mortality {
        /// Retirement age.
        #[arg(long)]
        age: u32,
        /// Comma-separated consumption ratios; defaults to the published set.
        #[arg(long)]
        ratios: Option<String>,
    },
}

/// Parses a comma-separated list; an explicit empty string means "no rows".
fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|item| {
            item.trim()
                .parse::<f64>()
                .with_context(|| format!("parsing {what} entry {item:?}"))
        })
        .collect()
}

fn parse_years(text: &str) -> Result<Vec<u32>> {
    parse_list(text, "years")?
        .into_iter()
        .map(|y| {
            if y.fract() == 0.0 && y >= 0.0 {
                Ok(y as u32)
            } else {
                bail!("years must be whole and non-negative, got {y}")
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct MortalityRow {
    ratio: f64,
    age: u32,
    probability: f64,
}

#[derive(Debug, Serialize)]
struct MortalityTable {
    age: u32,
    rows: Vec<MortalityRow>,
}

fn load_life_table(config: &RunConfig) -> Result<LifeTable> {
    if config.paths.life_table.is_empty() {
        Ok(LifeTable::baseline().clone())
    } else {
        LifeTable::from_csv_path(Path::new(&config.paths.life_table))
            .with_context(|| format!("reading life table {}", config.paths.life_table))
    }
}

/// Generates the requested table, writing a CSV and a JSON report.
pub fn run(config: &RunConfig, args: &TablesArgs) -> Result<()> {
    let constants = config.constants();
    let out_dir = Path::new(&config.out_dir);
    match &args.kind {
        TableKind::Pension { years, ratios } => {
            let ratios = match ratios {
                Some(text) => parse_list(text, "ratios")?,
                None if *years == 25 => PENSION_25_RATIOS.to_vec(),
                None if *years == 40 => PENSION_40_RATIOS.to_vec(),
                None => bail!("no published ratio set for {years} years; pass --ratios"),
            };
            let filename = format!("pension_{years}y.csv");
            let header = ["ratio", "implied_return", "probability"];
            if ratios.is_empty() {
                write_csv(out_dir, &filename, &header, &[])?;
                let report = Report::new("tables", config, serde_json::Value::Null, serde_json::json!({
                    "saving_years": years, "rows": []
                }));
                report.write(out_dir, "tables_pension.json")?;
                return Ok(());
            }
            let table = pension_size_table(*years, &ratios, &constants, &config.joint_grid()?)
                .context("generating the pension-size table")?;
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| vec![fmt(r.ratio), fmt(r.implied_return), fmt(r.probability)])
                .collect();
            write_csv(out_dir, &filename, &header, &rows)?;
            let diagnostics = serde_json::to_value(&table.diagnostics)?;
            Report::new("tables", config, diagnostics, &table).write(out_dir, "tables_pension.json")?;
        }
        TableKind::Survival { ratio, years } => {
            let years = match years {
                Some(text) => parse_years(text)?,
                None => published_survival_years(*ratio).ok_or_else(|| {
                    anyhow::anyhow!("no published retirement lengths for ratio {ratio}; pass --years")
                })?,
            };
            let filename = format!("survival_ratio_{ratio}.csv");
            let header = ["ratio", "years", "irr", "survival"];
            if years.is_empty() {
                write_csv(out_dir, &filename, &header, &[])?;
                Report::new("tables", config, serde_json::Value::Null, serde_json::json!({
                    "consumption_ratio": ratio, "rows": []
                }))
                .write(out_dir, "tables_survival.json")?;
                return Ok(());
            }
            let table =
                consumption_survival_table(*ratio, &years, &constants, &config.consumption_grid()?)
                    .context("generating the survival table")?;
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| vec![fmt(*ratio), r.years.to_string(), fmt(r.irr), fmt(r.survival)])
                .collect();
            write_csv(out_dir, &filename, &header, &rows)?;
            let diagnostics = serde_json::to_value(&table.diagnostics)?;
            Report::new("tables", config, diagnostics, &table).write(out_dir, "tables_survival.json")?;
        }
        TableKind::Mfpt { ratios } => {
            let ratios = match ratios {
                Some(text) => parse_list(text, "ratios")?,
                None => CONSUMPTION_RATIOS.to_vec(),
            };
            let header = ["ratio", "mfpt", "tail_share", "survival_at_horizon", "horizon", "horizon_warning"];
            if ratios.is_empty() {
                write_csv(out_dir, "mfpt.csv", &header, &[])?;
                Report::new("tables", config, serde_json::Value::Null, serde_json::json!({
                    "rows": []
                }))
                .write(out_dir, "tables_mfpt.json")?;
                return Ok(());
            }
            let table = mfpt_table(&ratios, &constants, &config.consumption_grid()?)
                .context("generating the depletion-time table")?;
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| {
                    vec![
                        fmt(r.ratio),
                        fmt(r.mfpt),
                        fmt(r.tail_share),
                        fmt(r.survival_at_horizon),
                        fmt(r.horizon),
                        r.horizon_warning.to_string(),
                    ]
                })
                .collect();
            write_csv(out_dir, "mfpt.csv", &header, &rows)?;
            Report::new("tables", config, serde_json::Value::Null, &table)
                .write(out_dir, "tables_mfpt.json")?;
        }
        TableKind::Mortality { age, ratios } => {
            let ratios = match ratios {
                Some(text) => parse_list(text, "ratios")?,
                None => CONSUMPTION_RATIOS.to_vec(),
            };
            let filename = format!("mortality_age_{age}.csv");
            let header = ["ratio", "age", "probability"];
            if ratios.is_empty() {
                write_csv(out_dir, &filename, &header, &[])?;
                Report::new("tables", config, serde_json::Value::Null, serde_json::json!({
                    "age": age, "rows": []
                }))
                .write(out_dir, "tables_mortality.json")?;
                return Ok(());
            }
            let life_table = load_life_table(config)?;
            let grid = config.consumption_grid()?;
            let mut rows = Vec::with_capacity(ratios.len());
            for &ratio in &ratios {
                let probability =
                    prob_pension_outlives(ratio, *age, &life_table, &constants, &grid)
                        .with_context(|| format!("mortality-weighted survival at ratio {ratio}"))?;
                rows.push(MortalityRow { ratio, age: *age, probability });
            }
            let csv_rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![fmt(r.ratio), r.age.to_string(), fmt(r.probability)])
                .collect();
            write_csv(out_dir, &filename, &header, &csv_rows)?;
            let table = MortalityTable { age: *age, rows };
            Report::new("tables", config, serde_json::Value::Null, &table)
                .write(out_dir, "tables_mortality.json")?;
        }
    }
    Ok(())
}
