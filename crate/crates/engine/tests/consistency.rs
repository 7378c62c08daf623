//! Cross-checks tying the finite-difference solvers to independent oracles:
//! the closed-form lognormal reduction, the Monte Carlo engine, and the
//! documented accuracy targets for boundary leakage, grid refinement, and
//! initial-condition width.
//!
//! The default-constants joint solve at 25 years is a special case: the
//! salary marginal is lognormal with log-std ≈ 2.04 and median ≈ 0.055 by
//! then, far below one grid cell (Δm = 0.2), so the zero-Dirichlet wall at
//! s = 0 absorbs over half of the interior mass. The checks below separate
//! what that implies: the operator itself is validated against Monte Carlo
//! in a regime the grid resolves, while the default-grid behaviour is pinned
//! as a bracket (raw < simulation < renormalized) plus two honest failures
//! against the documented targets the truncation makes unattainable.

use std::sync::LazyLock;

use pension_engine::fpe::{
    exceedance_from_density, initial_density, marginals, solve_fpe_1d, solve_fpe_1d_with,
    solve_fpe_2d, solve_fpe_2d_with, survival_at, survival_curve, FpeTrajectory, Grid,
    DEFAULT_IC_SIGMA,
};
use pension_engine::index::{fw_log_variance, FwApproximation};
use pension_engine::mc::{
    mc_estimate, simulate_consumption, simulate_consumption_with, simulate_fund, EulerConfig,
    Functional, McEstimate, PathEnsemble,
};
use pension_engine::sde::CalibratedConstants;

fn scalar(estimate: &McEstimate) -> (f64, f64) {
    match estimate {
        McEstimate::Scalar { value, std_error, .. } => (*value, *std_error),
        McEstimate::Curve { .. } => panic!("expected a scalar estimate"),
    }
}

fn default_joint_solve(horizon: f64) -> FpeTrajectory {
    let grid = Grid::default_2d();
    let ic = initial_density(&grid, &[1.0, 1.0], &[DEFAULT_IC_SIGMA, DEFAULT_IC_SIGMA]).unwrap();
    solve_fpe_2d(&CalibratedConstants::baseline(), &ic, horizon, &[horizon]).unwrap()
}

/// Default-constants joint solve at 25 years, shared across the tests below.
static JOINT_25: LazyLock<FpeTrajectory> = LazyLock::new(|| default_joint_solve(25.0));

/// Matching fund simulation: two hundred thousand paths of the joint
/// index/salary/fund system at the default constants.
static FUND_MC_25: LazyLock<PathEnsemble> = LazyLock::new(|| {
    let config = EulerConfig {
        dt: 1.0 / 24.0,
        horizon: 25.0,
        n_paths: 200_000,
        seed: 118,
        antithetic: false,
    };
    simulate_fund(&CalibratedConstants::baseline(), &config).unwrap()
});

fn gaussian_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

// With no contributions and no salary noise the fund axis decouples and
// follows the matched lognormal law of the index average, so the fund
// marginal at t = 10 must agree with the closed-form pushforward of the
// initial Gaussian, evaluated here by direct quadrature.
#[test]
fn fund_marginal_matches_the_lognormal_reduction() {
    let grid = Grid::new_2d(0.01, 600, 0.2, 25, 0.01).unwrap();
    let ic = initial_density(&grid, &[1.0, 1.0], &[0.05, 0.05]).unwrap();
    let fw = FwApproximation::baseline();
    let horizon = 10.0;
    let trajectory =
        solve_fpe_2d_with(&fw, 0.0, -0.0328, 0.0, &ic, horizon, &[horizon]).unwrap();
    let field = trajectory.checkpoints.last().unwrap();
    let (v_marginal, _) = marginals(field).unwrap();

    let sigma_log2 = fw_log_variance(&fw, horizon).unwrap();
    let sigma_log = sigma_log2.sqrt();
    let nodes = grid.nodes(0);
    let dh = grid.spacings[0];
    let quad_points = 241;
    let (x0_lo, x0_hi) = (1.0 - 6.0 * 0.05, 1.0 + 6.0 * 0.05);
    let dx0 = (x0_hi - x0_lo) / (quad_points - 1) as f64;
    let mut l1 = 0.0;
    for (j, &v) in nodes.iter().enumerate() {
        let mut oracle = 0.0;
        if v > 0.0 {
            for k in 0..quad_points {
                let x0 = x0_lo + k as f64 * dx0;
                let w = if k == 0 || k == quad_points - 1 { 0.5 } else { 1.0 };
                let mu = x0.ln() + fw.psi * horizon - 0.5 * sigma_log2;
                let z = (v.ln() - mu) / sigma_log;
                let lognormal =
                    (-0.5 * z * z).exp() / (v * sigma_log * (2.0 * std::f64::consts::PI).sqrt());
                oracle += w * gaussian_pdf(x0, 1.0, 0.05) * lognormal;
            }
            oracle *= dx0;
        }
        let w = if j == 0 || j == nodes.len() - 1 { 0.5 } else { 1.0 };
        l1 += w * (v_marginal[j] - oracle).abs() * dh;
    }
    assert!(l1 < 0.02, "L1 distance to the closed-form law is {l1:.5}");
}

// At a single constituent the index volatility is constant, so the absorbing
// solver and the path simulation describe the same first-passage problem;
// their depletion-time distributions must agree in Kolmogorov-Smirnov
// distance.
#[test]
fn depletion_times_match_the_simulation_at_constant_volatility() {
    let fw = FwApproximation::new(0.0329, 0.3464, 1).unwrap();
    let horizon = 20.0;
    let trajectory = solve_fpe_1d_with(&fw, 7.5, &Grid::default_1d(), horizon).unwrap();
    let curve = survival_curve(&trajectory).unwrap();

    let config = EulerConfig {
        dt: 1.0 / 120.0,
        horizon,
        n_paths: 100_000,
        seed: 20033,
        antithetic: false,
    };
    let ensemble = simulate_consumption_with(&fw, 7.5, &config).unwrap();
    let passages = ensemble.first_passage.as_ref().unwrap();
    let n = passages.len() as f64;
    let mut sorted: Vec<f64> = passages.iter().filter_map(|p| *p).collect();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());

    let mut ks = 0.0_f64;
    for i in 0..=200 {
        let t = i as f64 * 0.1;
        let absorbed_fpe = 1.0 - survival_at(&curve, t);
        let absorbed_mc = sorted.partition_point(|&p| p <= t) as f64 / n;
        ks = ks.max((absorbed_fpe - absorbed_mc).abs());
    }
    assert!(ks < 0.02, "KS distance between depletion-time laws is {ks:.4}");
}

// Full-constants survival at the ten-year mark, ratio ten: solver versus a
// hundred thousand simulated paths (both sides carry the same ramped index
// volatility).
#[test]
fn survival_at_ten_years_matches_the_simulation() {
    let constants = CalibratedConstants::baseline();
    let trajectory = solve_fpe_1d(&constants, 10.0, &Grid::default_1d(), 10.0).unwrap();
    let fpe = survival_at(&survival_curve(&trajectory).unwrap(), 10.0);

    let config = EulerConfig {
        dt: 1.0 / 120.0,
        horizon: 10.0,
        n_paths: 100_000,
        seed: 4207,
        antithetic: false,
    };
    let ensemble = simulate_consumption(&constants, 10.0, &config).unwrap();
    let (mc, se) = scalar(&mc_estimate(&ensemble, &Functional::SurvivalAt(10.0)).unwrap());
    let tolerance = 0.015_f64.max(3.0 * se);
    assert!(
        (fpe - mc).abs() <= tolerance,
        "solver {fpe:.4} vs simulation {mc:.4} (se {se:.4})"
    );
}

// Joint solver versus simulation in a regime the numerics resolve: salary
// volatility 0.15 keeps the ten-year salary marginal (log-std 0.47, median
// 0.64) well clear of the s = 0 wall, the salary spacing is refined to 0.05
// so the marginal spans several cells, and the time step is refined to 0.01.
// The initial Gaussian is kept narrow (σ_v 0.025, σ_s 0.05) because the
// simulation starts from exact points: a σ_v 0.05 / σ_s 0.1 start adds 17%
// to the terminal fund variance and alone pushes the shoulder exceedances
// 2.5pp apart. The two oracles must then agree on the fund exceedance
// within max(1.5pp, 3 MC standard errors).
#[test]
fn joint_density_tracks_the_simulation_in_a_resolved_regime() {
    let constants = CalibratedConstants { eta: 0.15, ..CalibratedConstants::baseline() };
    let grid = Grid::new_2d(0.025, 360, 0.05, 60, 0.01).unwrap();
    let ic = initial_density(&grid, &[1.0, 1.0], &[0.025, 0.05]).unwrap();
    let trajectory = solve_fpe_2d(&constants, &ic, 10.0, &[10.0]).unwrap();
    let field = trajectory.checkpoints.last().unwrap();
    let fpe_prob = exceedance_from_density(field, 2.0).unwrap().raw;
    let mass = field.interior_mass();
    assert!(mass > 0.97, "this regime is meant to be resolved; mass {mass:.4}");

    let config = EulerConfig {
        dt: 1.0 / 120.0,
        horizon: 10.0,
        n_paths: 100_000,
        seed: 7301,
        antithetic: false,
    };
    let ensemble = simulate_fund(&constants, &config).unwrap();
    let (mc, se) = scalar(&mc_estimate(&ensemble, &Functional::Exceedance(2.0)).unwrap());
    let tolerance = 0.015_f64.max(3.0 * se);
    assert!(
        (fpe_prob - mc).abs() <= tolerance,
        "solver {fpe_prob:.4} vs simulation {mc:.4} (se {se:.5}), target {tolerance:.4}"
    );
}

// Characterization of the default 25-year solve. The salary marginal has
// collapsed below one cell by then, the s = 0 wall has absorbed over half
// the mass, and the two exceedance readouts bracket the simulated value:
// raw conditions on a survivor set biased toward high salaries (too low a
// numerator), renormalized divides the same biased set by the remaining
// mass (too high). These are pinned so a change in either direction shows.
#[test]
fn default_grid_truncation_brackets_the_simulation() {
    let trajectory = &*JOINT_25;
    let field = trajectory.checkpoints.last().unwrap();
    let exceedance = exceedance_from_density(field, 3.33).unwrap();
    let mass = field.interior_mass();
    let s_low = trajectory.leaks.per_axis[1].0;
    let distant = trajectory.leaks.per_axis[0].1 + trajectory.leaks.per_axis[1].1;

    let (mc, se) = scalar(&mc_estimate(&FUND_MC_25, &Functional::Exceedance(3.33)).unwrap());
    assert!(se < 0.002, "standard error {se:.5}");

    assert!(
        exceedance.raw < mc && mc < exceedance.renormalized,
        "expected raw {:.4} < simulation {mc:.4} < renormalized {:.4}",
        exceedance.raw,
        exceedance.renormalized
    );
    assert!(
        (0.28..0.35).contains(&exceedance.raw),
        "raw exceedance {:.4} left its pinned band",
        exceedance.raw
    );
    assert!(
        (0.84..0.91).contains(&exceedance.renormalized),
        "renormalized exceedance {:.4} left its pinned band",
        exceedance.renormalized
    );
    assert!((0.69..0.75).contains(&mc), "simulated exceedance {mc:.4} left its pinned band");
    assert!((0.32..0.39).contains(&mass), "final interior mass {mass:.4} left its pinned band");
    assert!((0.50..0.60).contains(&s_low), "s = 0 wall absorbed {s_low:.4}");
    assert!((0.05..0.15).contains(&distant), "distant-edge leak {distant:.4}");
}

// Documented target: the 25-year fund-marginal mode lands within one cell
// of the histogram mode of the simulated terminal fund values.
#[test]
fn fund_mode_matches_the_simulation_within_one_cell() {
    let trajectory = &*JOINT_25;
    let field = trajectory.checkpoints.last().unwrap();
    let (v_marginal, _) = marginals(field).unwrap();
    let dh = trajectory.grid.spacings[0];
    let fpe_mode = dh
        * v_marginal
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap() as f64;

    let terminal = FUND_MC_25.terminal();
    let n_bins = (18.0 / dh) as usize;
    let mut counts = vec![0u32; n_bins];
    for &v in &terminal {
        if v >= 0.0 && v < 18.0 {
            counts[(v / dh) as usize] += 1;
        }
    }
    let mc_mode = (counts.iter().enumerate().max_by_key(|&(_, c)| *c).unwrap().0 as f64 + 0.5)
        * dh;

    assert!(
        (fpe_mode - mc_mode).abs() <= dh + 1e-12,
        "fund-marginal mode: solver {fpe_mode:.3} vs simulation {mc_mode:.3}, target one cell \
         ({dh}); the s = 0 wall removes low-salary (hence low-fund) mass from the solver \
         density and shifts its mode up"
    );
}

// The default joint grid is documented to lose less than 5% of the mass
// through the distant (high-edge) boundaries over 25 years.
#[test]
fn distant_boundary_leak_stays_under_five_percent() {
    let trajectory = &*JOINT_25;
    let distant = trajectory.leaks.per_axis[0].1 + trajectory.leaks.per_axis[1].1;
    assert!(
        distant < 0.05,
        "mass lost through the far edges over 25 years is {distant:.4}, target < 0.05; \
         the salary tail (log-std ≈ 2 by 25 years) carries it through s = 5"
    );
}

// Halving the fund spacing and the time step moves the headline probability
// by less than half a percentage point.
#[test]
fn headline_probability_is_stable_under_grid_refinement() {
    let p_coarse =
        exceedance_from_density(JOINT_25.checkpoints.last().unwrap(), 3.33).unwrap().raw;

    let fine_grid = Grid::new_2d(0.0125, 1440, 0.2, 25, 0.05).unwrap();
    let ic =
        initial_density(&fine_grid, &[1.0, 1.0], &[DEFAULT_IC_SIGMA, DEFAULT_IC_SIGMA]).unwrap();
    let fine = solve_fpe_2d(&CalibratedConstants::baseline(), &ic, 25.0, &[25.0]).unwrap();
    let p_fine = exceedance_from_density(fine.checkpoints.last().unwrap(), 3.33).unwrap().raw;

    assert!(
        (p_fine - p_coarse).abs() < 0.005,
        "refinement moved Pr(v > 3.33) from {p_coarse:.4} to {p_fine:.4}"
    );
}

// The reported probabilities must not depend on the width of the
// delta-approximating initial Gaussian across its documented range.
#[test]
fn headline_probability_is_stable_in_ic_width() {
    let grid = Grid::default_2d();
    let constants = CalibratedConstants::baseline();
    let prob_at = |sigma: f64| {
        let ic = initial_density(&grid, &[1.0, 1.0], &[sigma, sigma]).unwrap();
        let trajectory = solve_fpe_2d(&constants, &ic, 25.0, &[25.0]).unwrap();
        exceedance_from_density(trajectory.checkpoints.last().unwrap(), 3.33).unwrap().raw
    };
    let base = exceedance_from_density(JOINT_25.checkpoints.last().unwrap(), 3.33).unwrap().raw;
    for sigma in [0.025, 0.1] {
        let p = prob_at(sigma);
        assert!(
            (p - base).abs() < 0.005,
            "sigma {sigma}: Pr(v > 3.33) moved from {base:.4} to {p:.4}"
        );
    }
}
