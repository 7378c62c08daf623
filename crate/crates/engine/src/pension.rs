//! Domain layer tying the solvers to pension questions: implied returns and
//! retirement IRRs, pension-size probability tables, consumption survival and
//! mean-first-passage tables, mortality-conditioned death densities, the
//! probability that a pension outlives its holder, and a shifted-correlation
//! diagnostic for lagged series.

use std::io::Read;
use std::path::Path;

use once_cell::sync::Lazy;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpe::{
    exceedance_from_density, initial_density, mfpt_from_survival, solve_fpe_1d, solve_fpe_2d,
    survival_at, survival_curve, FpeError, FpeTrajectory, Grid, TailHandling, DEFAULT_IC_SIGMA,
};
use crate::sde::CalibratedConstants;

/// Errors from the pension-domain operations.
#[derive(Debug, Error)]
pub enum PensionError {
    #[error("ratio must be positive (got {0})")]
    NonPositiveRatio(f64),
    #[error("need at least one year")]
    ZeroYears,
    #[error("contribution fraction must lie in (0, 1) (got {0})")]
    BadContribution(f64),
    #[error("no retirement years requested")]
    EmptyYears,
    #[error("root finder could not bracket a sign change")]
    NoBracket,
    #[error("age {age} is outside the life table range {min}..={max}")]
    AgeOutOfRange { age: u32, min: u32, max: u32 },
    #[error("life table: {0}")]
    BadLifeTable(String),
    #[error("series overlap is {overlap} points after the shift; need at least 3")]
    ShortOverlap { overlap: usize },
    #[error("a series is constant on the overlap, so the correlation is undefined")]
    DegenerateSeries,
    #[error(transparent)]
    Fpe(#[from] FpeError),
    #[error("life table csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bisection stops when the bracket is narrower than this.
const BISECT_TOL: f64 = 1e-8;

/// Midpoint bisection on a bracketed sign change; works for either monotone
/// orientation. The endpoints must already straddle the root.
fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64, PensionError> {
    let f_lo = f(lo);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let f_hi = f(hi);
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(PensionError::NoBracket);
    }
    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sum of (1+r)^i for i = 1..=years: the value a unit saved at the end of
/// each year accumulates to by the horizon.
fn growth_sum(r: f64, years: u32) -> f64 {
    let g = 1.0 + r;
    (1..=years).map(|i| g.powi(i as i32)).sum()
}

/// Sum of (1+r)^-i for i = 1..=years: the present value of a unit consumed
/// at the end of each year.
fn discount_sum(r: f64, years: u32) -> f64 {
    let g = 1.0 + r;
    (1..=years).map(|i| g.powi(-(i as i32))).sum()
}

/// Annual return a deterministic saver would need for yearly contributions of
/// `lambda_contrib` (fraction of salary) to reach `ratio` times the salary in
/// `years`: solves lambda * sum (1+r)^i = ratio by bisection to 1e-8. The
/// default bracket [-0.99, 1.0] is widened for extreme ratios; ratios below
/// lambda * years yield a negative rate.
pub fn implied_annual_return(
    ratio: f64,
    years: u32,
    lambda_contrib: f64,
) -> Result<f64, PensionError> {
    if !(ratio > 0.0) {
        return Err(PensionError::NonPositiveRatio(ratio));
    }
    if years == 0 {
        return Err(PensionError::ZeroYears);
    }
    if !(lambda_contrib > 0.0 && lambda_contrib < 1.0) {
        return Err(PensionError::BadContribution(lambda_contrib));
    }
    let f = |r: f64| lambda_contrib * growth_sum(r, years) - ratio;
    let mut lo = -0.99;
    let mut hi = 1.0;
    for _ in 0..64 {
        if f(lo) < 0.0 {
            break;
        }
        lo = -1.0 + 0.1 * (1.0 + lo);
    }
    for _ in 0..64 {
        if f(hi) > 0.0 {
            break;
        }
        hi = 2.0 * hi + 1.0;
    }
    bisect(&f, lo, hi)
}

/// Internal rate of return of a retirement plan paying one unit of consumption
/// yearly from a pot of `consumption_ratio` units over `years`: solves
/// sum (1+r)^-i = consumption_ratio by bisection to 1e-8. Ratios above the
/// year count yield a negative rate.
pub fn retirement_irr(consumption_ratio: f64, years: u32) -> Result<f64, PensionError> {
    if !(consumption_ratio > 0.0) {
        return Err(PensionError::NonPositiveRatio(consumption_ratio));
    }
    if years == 0 {
        return Err(PensionError::ZeroYears);
    }
    let f = |r: f64| discount_sum(r, years) - consumption_ratio;
    let lo = -0.99;
    let mut hi = 1.0;
    for _ in 0..64 {
        if f(hi) < 0.0 {
            break;
        }
        hi = 2.0 * hi + 1.0;
    }
    bisect(&f, lo, hi)
}

/// A fully specified planning question: how long to save, the target pension
/// as a multiple of salary, the contribution fraction, and how the pension is
/// drawn down afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PensionQuestion {
    /// Years of saving before retirement.
    pub saving_years: u32,
    /// Target pension size over initial salary.
    pub ratio: f64,
    /// Fraction of salary contributed each year.
    pub contribution: f64,
    /// Age at retirement.
    pub retirement_age: u32,
    /// Initial pension over yearly consumption, in years.
    pub consumption_ratio: f64,
}

impl PensionQuestion {
    /// Checks the plan parameters: positive years, ratios, age, and a
    /// contribution fraction strictly inside (0, 1).
    pub fn validate(&self) -> Result<(), PensionError> {
        if self.saving_years == 0 || self.retirement_age == 0 {
            return Err(PensionError::ZeroYears);
        }
        if !(self.ratio > 0.0) {
            return Err(PensionError::NonPositiveRatio(self.ratio));
        }
        if !(self.consumption_ratio > 0.0) {
            return Err(PensionError::NonPositiveRatio(self.consumption_ratio));
        }
        if !(self.contribution > 0.0 && self.contribution < 1.0) {
            return Err(PensionError::BadContribution(self.contribution));
        }
        Ok(())
    }
}

/// One age interval of a period life table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifeTableRow {
    /// Starting age of the interval.
    pub age: u32,
    /// True for the final open-ended interval (written as e.g. "100+").
    pub open_ended: bool,
    /// Probability of dying within the interval (column q).
    pub death_prob: f64,
    /// Survivors reaching the interval out of the initial cohort (column l).
    pub survivors: f64,
    /// Deaths within the interval (column d).
    pub deaths: f64,
    /// Person-years lived within the interval (column L).
    pub person_years: f64,
    /// Person-years lived above the interval start (column T).
    pub person_years_above: f64,
    /// Remaining life expectancy at the interval start (column e).
    pub expectancy: f64,
}

/// A period life table: one row per age from the first age up to an
/// open-ended terminal interval with death probability one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifeTable {
    rows: Vec<LifeTableRow>,
}

const EMBEDDED_LIFE_TABLE: &str = include_str!("../data/lifetable.csv");

static BASELINE_LIFE_TABLE: Lazy<LifeTable> = Lazy::new(|| {
    LifeTable::from_csv(EMBEDDED_LIFE_TABLE.as_bytes()).expect("embedded life table is valid")
});

impl LifeTable {
    /// Bundled United States 2003 period life table (CDC), ages 0 through the
    /// open interval 100+.
    pub fn baseline() -> &'static LifeTable {
        &BASELINE_LIFE_TABLE
    }

    /// Parses a life table from CSV with header `age,q,l,d,L,T,e`, where age
    /// is an integer or, for the terminal open interval, an integer with a
    /// trailing `+`. Validates the table before returning it.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, PensionError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let expected = ["age", "q", "l", "d", "L", "T", "e"];
        let headers = rdr.headers()?.clone();
        if !headers.iter().eq(expected) {
            return Err(PensionError::BadLifeTable(format!(
                "header must be age,q,l,d,L,T,e (got {:?})",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let rec = record?;
            if rec.len() != expected.len() {
                return Err(PensionError::BadLifeTable(format!(
                    "row {:?} has {} fields, need {}",
                    rec.position().map(|p| p.line()),
                    rec.len(),
                    expected.len()
                )));
            }
            let age_text = &rec[0];
            let open_ended = age_text.ends_with('+');
            let age: u32 = age_text.trim_end_matches('+').parse().map_err(|_| {
                PensionError::BadLifeTable(format!("bad age {age_text:?}"))
            })?;
            let num = |i: usize, name: &str| -> Result<f64, PensionError> {
                let v: f64 = rec[i].parse().map_err(|_| {
                    PensionError::BadLifeTable(format!(
                        "age {age_text}: bad {name} value {:?}",
                        &rec[i]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(PensionError::BadLifeTable(format!(
                        "age {age_text}: {name} is not finite"
                    )));
                }
                Ok(v)
            };
            rows.push(LifeTableRow {
                age,
                open_ended,
                death_prob: num(1, "q")?,
                survivors: num(2, "l")?,
                deaths: num(3, "d")?,
                person_years: num(4, "L")?,
                person_years_above: num(5, "T")?,
                expectancy: num(6, "e")?,
            });
        }
        let table = LifeTable { rows };
        table.validate()?;
        Ok(table)
    }

    /// Reads and validates a life table CSV from disk.
    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self, PensionError> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    /// All rows in age order.
    pub fn rows(&self) -> &[LifeTableRow] {
        &self.rows
    }

    /// First tabulated age.
    pub fn first_age(&self) -> u32 {
        self.rows[0].age
    }

    /// Starting age of the terminal open interval.
    pub fn terminal_age(&self) -> u32 {
        self.rows[self.rows.len() - 1].age
    }

    /// The row starting at `age`, if tabulated.
    pub fn row(&self, age: u32) -> Option<&LifeTableRow> {
        if age < self.first_age() {
            return None;
        }
        self.rows.get((age - self.first_age()) as usize)
    }

    /// Internal consistency checks: contiguous ages, a single open-ended
    /// terminal row with death probability one, non-increasing survivors,
    /// deaths matching survivor differences within the table's integer
    /// rounding, and death probabilities matching deaths over survivors.
    fn validate(&self) -> Result<(), PensionError> {
        let bad = |msg: String| Err(PensionError::BadLifeTable(msg));
        if self.rows.is_empty() {
            return bad("table has no rows".into());
        }
        let last = self.rows.len() - 1;
        for (i, row) in self.rows.iter().enumerate() {
            if row.age != self.rows[0].age + i as u32 {
                return bad(format!("ages must be contiguous (row {} has age {})", i, row.age));
            }
            if row.open_ended != (i == last) {
                return bad(format!(
                    "only the final row may be open-ended (row at age {})",
                    row.age
                ));
            }
            if !(row.survivors > 0.0) {
                return bad(format!("age {}: survivors must be positive", row.age));
            }
            if !(0.0..=1.0).contains(&row.death_prob) {
                return bad(format!("age {}: death probability outside [0, 1]", row.age));
            }
            // The printed columns are rounded to whole persons, so survivor
            // differences may be off by one.
            let next_survivors = if i == last { 0.0 } else { self.rows[i + 1].survivors };
            if (row.deaths - (row.survivors - next_survivors)).abs() > 1.0 + 1e-9 {
                return bad(format!(
                    "age {}: deaths {} disagree with the survivor difference {}",
                    row.age,
                    row.deaths,
                    row.survivors - next_survivors
                ));
            }
            if (row.death_prob - row.deaths / row.survivors).abs() > 1e-3 {
                return bad(format!(
                    "age {}: death probability {} disagrees with deaths/survivors {}",
                    row.age,
                    row.death_prob,
                    row.deaths / row.survivors
                ));
            }
            if i > 0 && row.survivors > self.rows[i - 1].survivors {
                return bad(format!("age {}: survivors increase", row.age));
            }
        }
        if (self.rows[last].death_prob - 1.0).abs() > 1e-6 {
            return bad("terminal open interval must have death probability 1".into());
        }
        Ok(())
    }
}

/// Death-time density conditional on having reached `current_age`: one mass
/// per whole year of remaining life, plus a lump for the open-ended terminal
/// interval placed at that interval's own expectancy offset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalDeathPdf {
    /// Age the density conditions on.
    pub current_age: u32,
    /// Mass of death within year t of `current_age`, indexed by t.
    pub yearly: Vec<f64>,
    /// Mass of the terminal open interval.
    pub terminal_mass: f64,
    /// Support point of the terminal mass, in years past `current_age`.
    pub terminal_offset: f64,
}

impl ConditionalDeathPdf {
    /// Total mass; one by construction up to float error.
    pub fn total_mass(&self) -> f64 {
        self.yearly.iter().sum::<f64>() + self.terminal_mass
    }

    /// Remaining life expectancy implied by the density, with deaths within a
    /// year placed at midyear.
    pub fn expectancy(&self) -> f64 {
        let mid: f64 = self
            .yearly
            .iter()
            .enumerate()
            .map(|(t, f)| (t as f64 + 0.5) * f)
            .sum();
        mid + self.terminal_offset * self.terminal_mass
    }
}

/// Conditional death-time density at `current_age` from a life table. Yearly
/// masses come from survivor differences rather than the printed deaths
/// column: the differences telescope, so the density sums to one exactly.
pub fn conditional_death_pdf(
    life_table: &LifeTable,
    current_age: u32,
) -> Result<ConditionalDeathPdf, PensionError> {
    let first = life_table.first_age();
    let terminal = life_table.terminal_age();
    if current_age < first || current_age > terminal {
        return Err(PensionError::AgeOutOfRange { age: current_age, min: first, max: terminal });
    }
    let rows = life_table.rows();
    let base = (current_age - first) as usize;
    let alive = rows[base].survivors;
    let yearly: Vec<f64> = (base..rows.len() - 1)
        .map(|i| (rows[i].survivors - rows[i + 1].survivors) / alive)
        .collect();
    let last = &rows[rows.len() - 1];
    Ok(ConditionalDeathPdf {
        current_age,
        yearly,
        terminal_mass: last.survivors / alive,
        terminal_offset: (terminal - current_age) as f64 + last.expectancy,
    })
}

/// Expected fund survival over a death-time density: the sum of S(t + 1/2)
/// weighted by the yearly masses, with the terminal lump read at its own
/// offset. Midyear sampling follows the convention that deaths spread evenly
/// through the year.
pub fn mortality_weighted_survival(curve: &[(f64, f64)], pdf: &ConditionalDeathPdf) -> f64 {
    let mid: f64 = pdf
        .yearly
        .iter()
        .enumerate()
        .map(|(t, f)| survival_at(curve, t as f64 + 0.5) * f)
        .sum();
    mid + survival_at(curve, pdf.terminal_offset) * pdf.terminal_mass
}

/// Probability that the pension fund outlives its holder: the fund survival
/// curve from a 1-D solve at `consumption_ratio`, averaged over the death-time
/// density of a holder retiring at `retirement_age`.
pub fn prob_pension_outlives(
    consumption_ratio: f64,
    retirement_age: u32,
    life_table: &LifeTable,
    constants: &CalibratedConstants,
    grid: &Grid,
) -> Result<f64, PensionError> {
    let pdf = conditional_death_pdf(life_table, retirement_age)?;
    let trajectory = solve_fpe_1d(constants, consumption_ratio, grid, pdf.terminal_offset)?;
    let curve = survival_curve(&trajectory)?;
    Ok(mortality_weighted_survival(&curve, &pdf))
}

/// Solver health indicators carried alongside a generated table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    /// Interior mass remaining at the end of the solve.
    pub final_mass: f64,
    /// (low, high) edge losses per axis.
    pub leaks_per_axis: Vec<(f64, f64)>,
    /// Most negative node value seen (0 when none).
    pub max_undershoot: f64,
    /// Largest first/last-step cell Peclet number.
    pub max_cell_peclet: f64,
    /// Solve horizon in years.
    pub horizon: f64,
}

impl SolveDiagnostics {
    fn from_trajectory(trajectory: &FpeTrajectory) -> Self {
        let &(horizon, final_mass) =
            trajectory.mass_curve.last().expect("mass curve is never empty");
        Self {
            final_mass,
            leaks_per_axis: trajectory.leaks.per_axis.clone(),
            max_undershoot: trajectory.max_undershoot,
            max_cell_peclet: trajectory.max_cell_peclet,
            horizon,
        }
    }
}

/// One target ratio of a pension-size table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PensionSizeRow {
    /// Target pension size over initial salary.
    pub ratio: f64,
    /// Annual return a deterministic saver would need to reach the ratio.
    pub implied_return: f64,
    /// Probability that the fund-to-salary ratio ends at or above the target.
    pub probability: f64,
}

/// Pension-size probabilities after a fixed saving period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PensionSizeTable {
    /// Years of saving the table describes.
    pub saving_years: u32,
    /// One row per requested target ratio.
    pub rows: Vec<PensionSizeRow>,
    /// Health of the single solve behind all rows.
    pub diagnostics: SolveDiagnostics,
}

/// Probability of reaching each target pension ratio after `saving_years` of
/// saving: one 2-D solve at the standard initial condition, read out as tail
/// probabilities of the fund-to-salary marginal, with the deterministic
/// implied return alongside each ratio.
pub fn pension_size_table(
    saving_years: u32,
    ratios: &[f64],
    constants: &CalibratedConstants,
    grid: &Grid,
) -> Result<PensionSizeTable, PensionError> {
    if saving_years == 0 {
        return Err(PensionError::ZeroYears);
    }
    let ic = initial_density(grid, &[1.0, 1.0], &[DEFAULT_IC_SIGMA, DEFAULT_IC_SIGMA])?;
    let horizon = saving_years as f64;
    let trajectory = solve_fpe_2d(constants, &ic, horizon, &[horizon])?;
    let field = trajectory.checkpoints.last().expect("final checkpoint requested");
    let rows = ratios
        .iter()
        .map(|&ratio| {
            Ok(PensionSizeRow {
                ratio,
                implied_return: implied_annual_return(ratio, saving_years, constants.lambda_contrib)?,
                probability: exceedance_from_density(field, ratio)?.raw,
            })
        })
        .collect::<Result<Vec<_>, PensionError>>()?;
    Ok(PensionSizeTable {
        saving_years,
        rows,
        diagnostics: SolveDiagnostics::from_trajectory(&trajectory),
    })
}

/// One retirement length of a consumption survival table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumptionSurvivalRow {
    /// Years of retirement.
    pub years: u32,
    /// Internal rate of return for the pot to last exactly this long.
    pub irr: f64,
    /// Probability the fund is still positive after this many years.
    pub survival: f64,
}

/// Fund survival probabilities at a fixed consumption ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumptionSurvivalTable {
    /// Initial pension over yearly consumption, in years.
    pub consumption_ratio: f64,
    /// One row per requested retirement length.
    pub rows: Vec<ConsumptionSurvivalRow>,
    /// Health of the single solve behind all rows.
    pub diagnostics: SolveDiagnostics,
}

/// Survival probabilities of a consuming fund: one 1-D solve to the longest
/// requested year, with the survival curve read at each year and the matching
/// IRR alongside.
pub fn consumption_survival_table(
    consumption_ratio: f64,
    retirement_years: &[u32],
    constants: &CalibratedConstants,
    grid: &Grid,
) -> Result<ConsumptionSurvivalTable, PensionError> {
    let horizon = *retirement_years.iter().max().ok_or(PensionError::EmptyYears)? as f64;
    let trajectory = solve_fpe_1d(constants, consumption_ratio, grid, horizon)?;
    let curve = survival_curve(&trajectory)?;
    let rows = retirement_years
        .iter()
        .map(|&years| {
            Ok(ConsumptionSurvivalRow {
                years,
                irr: retirement_irr(consumption_ratio, years)?,
                survival: survival_at(&curve, years as f64),
            })
        })
        .collect::<Result<Vec<_>, PensionError>>()?;
    Ok(ConsumptionSurvivalTable {
        consumption_ratio,
        rows,
        diagnostics: SolveDiagnostics::from_trajectory(&trajectory),
    })
}

/// One consumption ratio of a mean-first-passage-time table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MfptRow {
    /// Initial pension over yearly consumption, in years.
    pub ratio: f64,
    /// Mean time to fund depletion, in years.
    pub mfpt: f64,
    /// Fraction of the estimate contributed by the fitted tail.
    pub tail_share: f64,
    /// Survival remaining at the solve horizon.
    pub survival_at_horizon: f64,
    /// Set when over 5% of the mass survives even the longest horizon tried;
    /// the estimate is then extrapolation-heavy.
    pub horizon_warning: bool,
    /// Horizon the estimate was read at.
    pub horizon: f64,
}

/// Mean depletion times per consumption ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MfptTable {
    /// One row per requested ratio.
    pub rows: Vec<MfptRow>,
}

/// Starting horizon for depletion-time solves.
const MFPT_BASE_HORIZON: f64 = 40.0;
/// How many times the horizon is doubled when too much mass survives it.
const MFPT_MAX_DOUBLINGS: u32 = 3;

/// Mean first passage time to depletion per consumption ratio: a 1-D solve
/// per ratio (rows run in parallel), integrating the survival curve with an
/// exponential tail. The horizon starts at 40 years and doubles, up to three
/// times, while more than 5% of the mass survives it; a row whose warning
/// flag is still set after that should not be trusted.
pub fn mfpt_table(
    ratios: &[f64],
    constants: &CalibratedConstants,
    grid: &Grid,
) -> Result<MfptTable, PensionError> {
    let rows = ratios
        .par_iter()
        .map(|&ratio| {
            let mut horizon = MFPT_BASE_HORIZON;
            let mut doublings = 0;
            loop {
                let trajectory = solve_fpe_1d(constants, ratio, grid, horizon)?;
                let curve = survival_curve(&trajectory)?;
                let estimate = mfpt_from_survival(&curve, horizon, TailHandling::ExponentialTail);
                if !estimate.horizon_warning || doublings == MFPT_MAX_DOUBLINGS {
                    return Ok(MfptRow {
                        ratio,
                        mfpt: estimate.value,
                        tail_share: estimate.tail_share,
                        survival_at_horizon: estimate.survival_at_horizon,
                        horizon_warning: estimate.horizon_warning,
                        horizon,
                    });
                }
                horizon *= 2.0;
                doublings += 1;
            }
        })
        .collect::<Result<Vec<_>, PensionError>>()?;
    Ok(MfptTable { rows })
}

/// A shifted-correlation readout: the coefficient and how many points it
/// rests on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftedCorrelation {
    /// Sample Pearson coefficient on the overlap.
    pub rho: f64,
    /// Number of overlapping points used.
    pub overlap: usize,
}

/// Sample Pearson correlation between `series_a` and `series_b` advanced by
/// `shift` periods: pairs (a[t], b[t + shift]) over the overlap. Advancing
/// series_b undoes a reporting lag of `shift` periods.
pub fn shifted_pearson(
    series_a: &[f64],
    series_b: &[f64],
    shift: usize,
) -> Result<ShiftedCorrelation, PensionError> {
    let overlap = series_a.len().min(series_b.len().saturating_sub(shift));
    if overlap < 3 {
        return Err(PensionError::ShortOverlap { overlap });
    }
    let a = &series_a[..overlap];
    let b = &series_b[shift..shift + overlap];
    let n = overlap as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..overlap {
        let da = a[i] - mean_a;
        let db = b[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(PensionError::DegenerateSeries);
    }
    Ok(ShiftedCorrelation { rho: cov / (var_a.sqrt() * var_b.sqrt()), overlap })
}
