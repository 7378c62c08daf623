//! Deterministic report envelope and output-file helpers shared by the
//! subcommands. Reports carry no timestamps and format floats in shortest
//! round-trip form, so identical configuration and seed reproduce identical
//! bytes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// Envelope wrapping every JSON report: tool identity, the resolved
/// configuration echoed verbatim, solver diagnostics, and the results.
#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    /// Tool name.
    pub tool: &'static str,
    /// Tool version.
    pub version: &'static str,
    /// Subcommand that produced the report.
    pub command: &'a str,
    /// Seed the run used.
    pub seed: u64,
    /// First 12 hex digits of the SHA-256 of the canonical configuration.
    pub config_hash: String,
    /// The resolved run configuration.
    pub config: &'a RunConfig,
    /// Solver or sampler health indicators; non-finite values serialize as
    /// null.
    pub diagnostics: serde_json::Value,
    /// Command results.
    pub results: T,
}

impl<'a, T: Serialize> Report<'a, T> {
    /// Assembles an envelope around command results.
    pub fn new(
        command: &'a str,
        config: &'a RunConfig,
        diagnostics: serde_json::Value,
        results: T,
    ) -> Self {
        Report {
            tool: "pensim",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            config_hash: config.hash(),
            config,
            diagnostics,
            results,
        }
    }

    /// Writes the report as pretty JSON into the output directory and
    /// announces the path on stdout.
    pub fn write(&self, dir: &Path, filename: &str) -> Result<PathBuf> {
        let path = dir.join(filename);
        let mut body = serde_json::to_string_pretty(self).context("serializing report")?;
        body.push('\n');
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
        Ok(path)
    }
}

/// Writes CSV rows (header first) into the output directory and announces
/// the path on stdout. Floats must already be formatted by the caller.
pub fn write_csv(dir: &Path, filename: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let path = dir.join(filename);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(path)
}

/// Shortest round-trip text form of a float, shared by every CSV emitter.
pub fn fmt(value: f64) -> String {
    value.to_string()
}
