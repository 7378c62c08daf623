//! Run configuration: baseline defaults, TOML file loading, command-line
//! overrides, and the canonical hash embedded in every report.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pension_engine::fpe::Grid;
use pension_engine::index::FwApproximation;
use pension_engine::mc::EulerConfig;
use pension_engine::sde::CalibratedConstants;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Calibration constants; the defaults are the baseline calibration behind
/// the published reference tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSection {
    /// Annual index drift.
    pub psi: f64,
    /// Annual single-stock volatility.
    pub phi: f64,
    /// Annual salary drift.
    pub xi: f64,
    /// Annual salary volatility.
    pub eta: f64,
    /// Contributed salary fraction.
    pub lambda_contrib: f64,
    /// Index constituent count.
    pub n_constituents: usize,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        let b = CalibratedConstants::baseline();
        Self {
            psi: b.psi,
            phi: b.phi,
            xi: b.xi,
            eta: b.eta,
            lambda_contrib: b.lambda_contrib,
            n_constituents: 500,
        }
    }
}

/// Solver grids; the defaults are the reference grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Fund-axis spacing of the accumulation grid.
    pub fund_spacing: f64,
    /// Fund-axis cell count.
    pub fund_cells: usize,
    /// Salary-axis spacing.
    pub salary_spacing: f64,
    /// Salary-axis cell count.
    pub salary_cells: usize,
    /// Accumulation solve time step.
    pub fund_time_step: f64,
    /// Consumption-axis spacing.
    pub consumption_spacing: f64,
    /// Consumption-axis cell count.
    pub consumption_cells: usize,
    /// Consumption solve time step.
    pub consumption_time_step: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            fund_spacing: 0.025,
            fund_cells: 720,
            salary_spacing: 0.2,
            salary_cells: 25,
            fund_time_step: 0.1,
            consumption_spacing: 0.01,
            consumption_cells: 1200,
            consumption_time_step: 0.01,
        }
    }
}

/// Monte Carlo settings shared by every simulation command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    /// Paths per ensemble.
    pub n_paths: usize,
    /// Euler time step in years.
    pub dt: f64,
    /// Pair antithetic path streams.
    pub antithetic: bool,
}

impl Default for McSection {
    fn default() -> Self {
        Self { n_paths: 100_000, dt: 1.0 / 120.0, antithetic: false }
    }
}

/// Input file locations; command flags override these.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Stock growth panel CSV (`id,t,value`).
    pub stock_panel: String,
    /// Salary growth panel CSV (`id,t,value`).
    pub salary_panel: String,
    /// Consumer-price-index series CSV (`t,index`).
    pub cpi: String,
    /// Life table CSV; empty selects the bundled baseline table.
    pub life_table: String,
}

/// Fully resolved run configuration, echoed verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every stochastic component.
    pub seed: u64,
    /// Directory reports and data files are written to.
    pub out_dir: String,
    /// Calibration constants.
    pub constants: ConstantsSection,
    /// Solver grids.
    pub grid: GridSection,
    /// Monte Carlo settings.
    pub mc: McSection,
    /// Input file locations.
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: "out".to_string(),
            constants: ConstantsSection::default(),
            grid: GridSection::default(),
            mc: McSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    /// Builds the effective configuration: defaults, then the config file,
    /// then flag overrides. `paper_defaults` resets constants and grids to
    /// the baseline calibration after the file is applied.
    pub fn resolve(
        config_path: Option<&Path>,
        paper_defaults: bool,
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<Self> {
        let mut config = match config_path {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if paper_defaults {
            config.constants = ConstantsSection::default();
            config.grid = GridSection::default();
        }
        if let Some(seed) = seed {
            config.seed = seed;
        }
        if let Some(out) = out {
            config.out_dir = out.to_string_lossy().into_owned();
        }
        config.check()?;
        Ok(config)
    }

    /// Rejects values no command could accept.
    fn check(&self) -> Result<()> {
        let c = &self.constants;
        for (name, value) in [
            ("psi", c.psi),
            ("phi", c.phi),
            ("xi", c.xi),
            ("eta", c.eta),
            ("lambda_contrib", c.lambda_contrib),
        ] {
            if !value.is_finite() {
                bail!("constants.{name} must be finite, got {value}");
            }
        }
        if c.phi < 0.0 {
            bail!("constants.phi must be non-negative, got {}", c.phi);
        }
        if c.eta < 0.0 {
            bail!("constants.eta must be non-negative, got {}", c.eta);
        }
        if !(c.lambda_contrib > 0.0 && c.lambda_contrib < 1.0) {
            bail!("constants.lambda_contrib must lie in (0, 1), got {}", c.lambda_contrib);
        }
        if c.n_constituents == 0 {
            bail!("constants.n_constituents must be positive");
        }
        if self.mc.n_paths == 0 {
            bail!("mc.n_paths must be positive");
        }
        if !(self.mc.dt > 0.0) || !self.mc.dt.is_finite() {
            bail!("mc.dt must be positive and finite, got {}", self.mc.dt);
        }
        Ok(())
    }

    /// The canonical text form the hash is computed over.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// First 12 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        let mut hex = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// Constants assembled from the section. The monthly provenance fields
    /// stay empty: file-supplied values carry no monthly source.
    pub fn constants(&self) -> CalibratedConstants {
        let c = &self.constants;
        CalibratedConstants {
            psi: c.psi,
            phi: c.phi,
            xi: c.xi,
            eta: c.eta,
            lambda_contrib: c.lambda_contrib,
            q_monthly: None,
            r_monthly_vol: None,
        }
    }

    /// Effective index volatility model for the configured constituent count.
    pub fn fw(&self) -> Result<FwApproximation> {
        FwApproximation::new(self.constants.psi, self.constants.phi, self.constants.n_constituents)
            .context("building the index volatility model")
    }

    /// The two-axis accumulation grid.
    pub fn joint_grid(&self) -> Result<Grid> {
        let g = &self.grid;
        Grid::new_2d(g.fund_spacing, g.fund_cells, g.salary_spacing, g.salary_cells, g.fund_time_step)
            .context("building the accumulation grid")
    }

    /// The one-axis consumption grid.
    pub fn consumption_grid(&self) -> Result<Grid> {
        let g = &self.grid;
        Grid::new_1d(g.consumption_spacing, g.consumption_cells, g.consumption_time_step)
            .context("building the consumption grid")
    }

    /// Euler configuration for a simulation over `horizon` years.
    pub fn euler(&self, horizon: f64) -> EulerConfig {
        EulerConfig {
            dt: self.mc.dt,
            horizon,
            n_paths: self.mc.n_paths,
            seed: self.seed,
            antithetic: self.mc.antithetic,
        }
    }
}
