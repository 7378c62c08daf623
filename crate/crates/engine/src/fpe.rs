//! Implicit finite-difference solvers for the forward Kolmogorov equations.
//!
//! The 2-D solver evolves the joint fund/salary density
//!
//! ```text
//! dp/dt = -d_v[(psi v + lambda s) p] - d_s(xi s p)
//!         + 1/2 d2_s(eta^2 s^2 p) + 1/2 d2_v(Phi^2(t) v^2 p)
//! ```
//!
//! and the 1-D solver evolves the scaled consumption density
//!
//! ```text
//! dq/dt = -d_x[(psi x - 1/ratio) q] + 1/2 d2_x(Phi^2(t) x^2 q)
//! ```
//!
//! both backward in time (BTCS), central in space, in conservative flux form,
//! with zero Dirichlet data on every edge. Two dimensions are handled by
//! operator splitting with alternating sweep order; every half-step is fully
//! implicit over the whole time step and solves tridiagonal systems directly.
//! Mass that crosses each edge is accounted per step, so the interior mass
//! plus accumulated leaks telescopes to the initial mass exactly.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{fw_phi_squared, FwApproximation, DEFAULT_CONSTITUENTS};
use crate::sde::CalibratedConstants;

/// Default width of the Gaussian that stands in for the point initial datum.
pub const DEFAULT_IC_SIGMA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum FpeError {
    #[error("grid must have 1 or 2 axes (got {0})")]
    BadDims(usize),
    #[error("grid spacing must be positive (got {0})")]
    BadSpacing(f64),
    #[error("grid needs at least 3 cells per axis (got {0})")]
    TooFewCells(usize),
    #[error("time step must be positive (got {0})")]
    BadTimeStep(f64),
    #[error("center/sigma dimensions do not match the grid")]
    DimMismatch,
    #[error("initial center {center} on axis {axis} is within 6 sigma ({sigma}) of the boundary [0, {extent}]")]
    CenterTooClose { axis: usize, center: f64, sigma: f64, extent: f64 },
    #[error("horizon must cover at least one step (dk {dk}, horizon {horizon})")]
    ShortHorizon { dk: f64, horizon: f64 },
    #[error("ratio must be positive (got {0})")]
    NonPositiveRatio(f64),
    #[error("tridiagonal solve failed at step {step}, axis {axis}, line {line}: zero pivot (grid {diag})")]
    SolveFailure { step: usize, axis: usize, line: usize, diag: String },
    #[error("threshold {threshold} lies beyond the grid, which is truncated at {max}")]
    ThresholdBeyondGrid { threshold: f64, max: f64 },
    #[error("operation needs a {need}-dimensional field (got {got})")]
    WrongDims { need: usize, got: usize },
    #[error("extended grid does not contain the base grid on axis {0}")]
    NotContained(usize),
    #[error("field and grid disagree on shape")]
    ShapeMismatch,
    #[error("index model error: {0}")]
    Index(#[from] crate::index::IndexError),
}

/// Uniform grid over `[0, extent]` per axis, with nodes at integer multiples
/// of the spacing; counts are cells, so an axis has `count + 1` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Node spacing per axis.
    pub spacings: Vec<f64>,
    /// Cell count per axis.
    pub counts: Vec<usize>,
    /// Time step.
    pub dk: f64,
}

impl Grid {
    /// One-axis grid over `[0, dx * n_cells]`.
    pub fn new_1d(dx: f64, n_cells: usize, dk: f64) -> Result<Self, FpeError> {
        Self::build(vec![dx], vec![n_cells], dk)
    }

    /// Two-axis grid over `[0, dh * n_v] x [0, dm * n_s]`.
    pub fn new_2d(dh: f64, n_v: usize, dm: f64, n_s: usize, dk: f64) -> Result<Self, FpeError> {
        Self::build(vec![dh, dm], vec![n_v, n_s], dk)
    }

    fn build(spacings: Vec<f64>, counts: Vec<usize>, dk: f64) -> Result<Self, FpeError> {
        if spacings.is_empty() || spacings.len() > 2 {
            return Err(FpeError::BadDims(spacings.len()));
        }
        for &s in &spacings {
            if !(s > 0.0) || !s.is_finite() {
                return Err(FpeError::BadSpacing(s));
            }
        }
        for &c in &counts {
            if c < 3 {
                return Err(FpeError::TooFewCells(c));
            }
        }
        if !(dk > 0.0) || !dk.is_finite() {
            return Err(FpeError::BadTimeStep(dk));
        }
        Ok(Self { spacings, counts, dk })
    }

    /// The accumulation grid used for the reference tables:
    /// v in [0, 18] at 0.025, s in [0, 5] at 0.2, time step 0.1.
    pub fn default_2d() -> Self {
        Self::new_2d(0.025, 720, 0.2, 25, 0.1).expect("default grid is valid")
    }

    /// The consumption grid used for the reference tables:
    /// x in [0, 12] at 0.01, time step 0.01.
    pub fn default_1d() -> Self {
        Self::new_1d(0.01, 1200, 0.01).expect("default grid is valid")
    }

    /// Number of axes.
    pub fn dims(&self) -> usize {
        self.spacings.len()
    }

    /// Domain length of an axis.
    pub fn extent(&self, axis: usize) -> f64 {
        self.spacings[axis] * self.counts[axis] as f64
    }

    /// Node coordinates of an axis.
    pub fn nodes(&self, axis: usize) -> Vec<f64> {
        (0..=self.counts[axis]).map(|i| i as f64 * self.spacings[axis]).collect()
    }
}

/// A density on a grid at one instant. For one-axis grids the value array has
/// a single column.
#[derive(Debug, Clone)]
pub struct DensityField {
    /// The grid the values live on.
    pub grid: Grid,
    /// Node values, first axis by row; boundary rows/columns are zero.
    pub values: Array2<f64>,
    /// Time the field refers to.
    pub time: f64,
    /// Interior mass at construction time.
    pub initial_mass: f64,
}

impl DensityField {
    /// Interior mass: cell volume times the sum over interior nodes, which
    /// equals the full trapezoidal integral because the boundary is zero.
    pub fn interior_mass(&self) -> f64 {
        let cell: f64 = self.grid.spacings.iter().product();
        cell * interior_sum(&self.values, self.grid.dims())
    }

    /// Most negative value, 0 when none are negative.
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0_f64, f64::min)
    }

    /// Values with numerical undershoots clipped at zero.
    pub fn clipped_values(&self) -> Array2<f64> {
        self.values.mapv(|v| v.max(0.0))
    }

    /// Writes the field as CSV: `t,v,s,p` for two axes, `t,x,q` for one.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        if self.grid.dims() == 2 {
            w.write_record(["t", "v", "s", "p"])?;
            let (nv, ns) = (self.grid.nodes(0), self.grid.nodes(1));
            for (j, &v) in nv.iter().enumerate() {
                for (l, &s) in ns.iter().enumerate() {
                    w.write_record(&[
                        self.time.to_string(),
                        v.to_string(),
                        s.to_string(),
                        self.values[[j, l]].to_string(),
                    ])?;
                }
            }
        } else {
            w.write_record(["t", "x", "q"])?;
            for (j, &x) in self.grid.nodes(0).iter().enumerate() {
                w.write_record(&[
                    self.time.to_string(),
                    x.to_string(),
                    self.values[[j, 0]].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn interior_sum(values: &Array2<f64>, dims: usize) -> f64 {
    let (rows, cols) = values.dim();
    let col_range = if dims == 2 { 1..cols - 1 } else { 0..cols };
    let mut sum = 0.0;
    for j in 1..rows - 1 {
        for l in col_range.clone() {
            sum += values[[j, l]];
        }
    }
    sum
}

/// Discretizes a product Gaussian centered inside the grid, zero on the
/// boundary, renormalized to unit interior mass.
pub fn initial_density(grid: &Grid, center: &[f64], sigmas: &[f64]) -> Result<DensityField, FpeError> {
    let dims = grid.dims();
    if center.len() != dims || sigmas.len() != dims {
        return Err(FpeError::DimMismatch);
    }
    for a in 0..dims {
        let extent = grid.extent(a);
        if center[a] - 6.0 * sigmas[a] < 0.0 || center[a] + 6.0 * sigmas[a] > extent {
            return Err(FpeError::CenterTooClose {
                axis: a,
                center: center[a],
                sigma: sigmas[a],
                extent,
            });
        }
    }
    let axis_gauss = |a: usize| -> Vec<f64> {
        grid.nodes(a)
            .iter()
            .map(|&x| {
                let z = (x - center[a]) / sigmas[a];
                (-0.5 * z * z).exp()
            })
            .collect()
    };
    let g0 = axis_gauss(0);
    let rows = grid.counts[0] + 1;
    let cols = if dims == 2 { grid.counts[1] + 1 } else { 1 };
    let mut values = Array2::zeros((rows, cols));
    if dims == 2 {
        let g1 = axis_gauss(1);
        for j in 1..rows - 1 {
            for l in 1..cols - 1 {
                values[[j, l]] = g0[j] * g1[l];
            }
        }
    } else {
        for j in 1..rows - 1 {
            values[[j, 0]] = g0[j];
        }
    }
    let cell: f64 = grid.spacings.iter().product();
    let mass = cell * interior_sum(&values, dims);
    values.mapv_inplace(|v| v / mass);
    Ok(DensityField { grid: grid.clone(), values, time: 0.0, initial_mass: 1.0 })
}

/// Mass lost through each edge, accumulated over a solve. Entry `a` holds the
/// (low, high) edge losses of axis `a`; inflow makes an entry negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLeaks {
    /// (low-edge, high-edge) loss per axis.
    pub per_axis: Vec<(f64, f64)>,
}

impl EdgeLeaks {
    fn zeros(dims: usize) -> Self {
        Self { per_axis: vec![(0.0, 0.0); dims] }
    }

    /// Net mass lost through all edges.
    pub fn total(&self) -> f64 {
        self.per_axis.iter().map(|(lo, hi)| lo + hi).sum()
    }
}

/// Result of a density solve: checkpointed fields, the per-step interior mass
/// curve, edge-leak accounting, and scheme diagnostics.
#[derive(Debug, Clone)]
pub struct FpeTrajectory {
    /// The grid the solve ran on.
    pub grid: Grid,
    /// Density snapshots at the requested times (snapped to whole steps).
    pub checkpoints: Vec<DensityField>,
    /// (time, interior mass) after every step, starting at the initial state.
    pub mass_curve: Vec<(f64, f64)>,
    /// Accumulated edge losses.
    pub leaks: EdgeLeaks,
    /// Most negative node value encountered (0 when none).
    pub max_undershoot: f64,
    /// Largest cell Peclet number |A| delta / D seen on the first and last
    /// steps; infinite for pure advection. Diagnostic only: the implicit
    /// scheme is stable regardless, but large values warn of smearing.
    pub max_cell_peclet: f64,
}

/// Factored tridiagonal system, reusable across right-hand sides.
struct TriFactor {
    sub: Vec<f64>,
    sup: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl TriFactor {
    /// Thomas elimination of `(sub, diag, sup)`; fails on a vanishing pivot.
    fn new(sub: Vec<f64>, diag: &[f64], sup: Vec<f64>) -> Option<Self> {
        let m = diag.len();
        let mut inv_diag = vec![0.0; m];
        let mut d = diag[0];
        if d.abs() < 1e-300 {
            return None;
        }
        inv_diag[0] = 1.0 / d;
        for i in 1..m {
            d = diag[i] - sub[i] * inv_diag[i - 1] * sup[i - 1];
            if d.abs() < 1e-300 {
                return None;
            }
            inv_diag[i] = 1.0 / d;
        }
        Some(Self { sub, sup, inv_diag })
    }

    /// Solves in place.
    fn solve(&self, rhs: &mut [f64]) {
        let m = rhs.len();
        for i in 1..m {
            rhs[i] -= self.sub[i] * self.inv_diag[i - 1] * rhs[i - 1];
        }
        rhs[m - 1] *= self.inv_diag[m - 1];
        for i in (0..m - 1).rev() {
            rhs[i] = (rhs[i] - self.sup[i] * rhs[i + 1]) * self.inv_diag[i];
        }
    }
}

/// One implicit line sweep: drift at half nodes, diffusion at nodes, in
/// conservative flux form. Retains the pieces needed to evaluate the boundary
/// fluxes of the solved line.
struct LineOp {
    factor: TriFactor,
    delta: f64,
    a_lo: f64,
    d_lo: f64,
    a_hi: f64,
    d_hi: f64,
    peclet: f64,
}

impl LineOp {
    /// Builds `(I - dk L)` for the operator `-d(A p)/dx + d2(D p)/dx2` on the
    /// interior of a line with `a_half.len()` cells.
    fn build(a_half: &[f64], d_node: &[f64], delta: f64, dk: f64) -> Option<Self> {
        let n = a_half.len(); // cells; nodes are 0..=n, unknowns 1..=n-1
        let m = n - 1;
        let mut sub = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut sup = vec![0.0; m];
        let mut peclet = 0.0_f64;
        for j in 1..n {
            let i = j - 1;
            let lower = a_half[j - 1] / (2.0 * delta) + d_node[j - 1] / (delta * delta);
            let center = -(a_half[j] - a_half[j - 1]) / (2.0 * delta) - 2.0 * d_node[j] / (delta * delta);
            let upper = -a_half[j] / (2.0 * delta) + d_node[j + 1] / (delta * delta);
            sub[i] = -dk * lower;
            diag[i] = 1.0 - dk * center;
            sup[i] = -dk * upper;
            let a_node = 0.5 * (a_half[j - 1] + a_half[j]).abs();
            peclet = peclet.max(if d_node[j] > 0.0 {
                a_node * delta / d_node[j]
            } else if a_node > 0.0 {
                f64::INFINITY
            } else {
                0.0
            });
        }
        let factor = TriFactor::new(sub, &diag, sup)?;
        Some(Self {
            factor,
            delta,
            a_lo: a_half[0],
            d_lo: d_node[1],
            a_hi: a_half[n - 1],
            d_hi: d_node[n - 1],
            peclet,
        })
    }

    /// Solves the line in place and returns the boundary fluxes
    /// (low edge, high edge) evaluated at the new values, so that
    /// `delta * sum(new - old) = dk * (f_lo - f_hi)` exactly.
    fn advance(&self, interior: &mut [f64]) -> (f64, f64) {
        self.factor.solve(interior);
        let first = interior[0];
        let last = interior[interior.len() - 1];
        let f_lo = self.a_lo * first / 2.0 - self.d_lo * first / self.delta;
        let f_hi = self.a_hi * last / 2.0 + self.d_hi * last / self.delta;
        (f_lo, f_hi)
    }
}

fn half_nodes(nodes: &[f64]) -> Vec<f64> {
    nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Maps requested checkpoint times to step indices (nearest step, deduped).
fn snap_checkpoints(times: &[f64], dk: f64, n_steps: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = times
        .iter()
        .map(|&t| ((t / dk).round() as i64).clamp(0, n_steps as i64) as usize)
        .collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Solves the 2-D accumulation equation from the given initial density up to
/// `horizon`, checkpointing at the requested times. Effective index
/// volatility uses the default 500-constituent approximation.
pub fn solve_fpe_2d(
    constants: &CalibratedConstants,
    ic: &DensityField,
    horizon: f64,
    checkpoint_times: &[f64],
) -> Result<FpeTrajectory, FpeError> {
    let fw = FwApproximation::new(constants.psi, constants.phi, DEFAULT_CONSTITUENTS)?;
    solve_fpe_2d_with(
        &fw,
        constants.lambda_contrib,
        constants.xi,
        constants.eta,
        ic,
        horizon,
        checkpoint_times,
    )
}

/// 2-D solve with an explicit index approximation (oracles use n = 1 for
/// constant volatility).
pub fn solve_fpe_2d_with(
    fw: &FwApproximation,
    lambda: f64,
    xi: f64,
    eta: f64,
    ic: &DensityField,
    horizon: f64,
    checkpoint_times: &[f64],
) -> Result<FpeTrajectory, FpeError> {
    let grid = &ic.grid;
    if grid.dims() != 2 {
        return Err(FpeError::WrongDims { need: 2, got: grid.dims() });
    }
    if ic.values.dim() != (grid.counts[0] + 1, grid.counts[1] + 1) {
        return Err(FpeError::ShapeMismatch);
    }
    let dk = grid.dk;
    if horizon < dk {
        return Err(FpeError::ShortHorizon { dk, horizon });
    }
    let n_steps = (horizon / dk).round() as usize;
    let (dh, dm) = (grid.spacings[0], grid.spacings[1]);
    let v_nodes = grid.nodes(0);
    let s_nodes = grid.nodes(1);
    let v_half = half_nodes(&v_nodes);
    let s_half = half_nodes(&s_nodes);
    let (n_v, n_s) = (grid.counts[0], grid.counts[1]);
    let diag_string = format!("{} x {} cells, dk {}", n_v, n_s, dk);

    // the s operator is independent of v and of time: build it once
    let a_half_s: Vec<f64> = s_half.iter().map(|&s| xi * s).collect();
    let d_node_s: Vec<f64> = s_nodes.iter().map(|&s| 0.5 * eta * eta * s * s).collect();
    let s_op = LineOp::build(&a_half_s, &d_node_s, dm, dk).ok_or(FpeError::SolveFailure {
        step: 0,
        axis: 1,
        line: 0,
        diag: diag_string.clone(),
    })?;

    let p = ic.values.clone();
    let cell = dh * dm;
    let mut mass_curve = vec![(ic.time, cell * interior_sum(&p, 2))];
    let leaks = EdgeLeaks::zeros(2);
    let mut max_undershoot = 0.0_f64;
    let max_peclet = s_op.peclet;
    let snaps = snap_checkpoints(checkpoint_times, dk, n_steps);
    let mut checkpoints = Vec::new();
    if snaps.contains(&0) {
        checkpoints.push(DensityField {
            grid: grid.clone(),
            values: p.clone(),
            time: ic.time,
            initial_mass: ic.initial_mass,
        });
    }

    struct SweepState {
        p: Array2<f64>,
        leaks: EdgeLeaks,
        line_buf: Vec<f64>,
        max_peclet: f64,
    }
    let mut st = SweepState {
        p,
        leaks,
        line_buf: vec![0.0_f64; n_v.max(n_s)],
        max_peclet,
    };

    let sweep_v = |st: &mut SweepState, d_node_v: &[f64], k: usize| -> Result<(), FpeError> {
        for l in 1..n_s {
            let a_half_v: Vec<f64> =
                v_half.iter().map(|&v| fw.psi * v + lambda * s_nodes[l]).collect();
            let op = LineOp::build(&a_half_v, d_node_v, dh, dk).ok_or(FpeError::SolveFailure {
                step: k,
                axis: 0,
                line: l,
                diag: diag_string.clone(),
            })?;
            if k == 0 || k + 1 == n_steps {
                st.max_peclet = st.max_peclet.max(op.peclet);
            }
            let buf = &mut st.line_buf[..n_v - 1];
            for j in 1..n_v {
                buf[j - 1] = st.p[[j, l]];
            }
            let (f_lo, f_hi) = op.advance(buf);
            for j in 1..n_v {
                st.p[[j, l]] = st.line_buf[j - 1];
            }
            st.leaks.per_axis[0].0 += -f_lo * dk * dm;
            st.leaks.per_axis[0].1 += f_hi * dk * dm;
        }
        Ok(())
    };
    let sweep_s = |st: &mut SweepState| {
        for j in 1..n_v {
            let buf = &mut st.line_buf[..n_s - 1];
            for l in 1..n_s {
                buf[l - 1] = st.p[[j, l]];
            }
            let (f_lo, f_hi) = s_op.advance(buf);
            for l in 1..n_s {
                st.p[[j, l]] = st.line_buf[l - 1];
            }
            st.leaks.per_axis[1].0 += -f_lo * dk * dh;
            st.leaks.per_axis[1].1 += f_hi * dk * dh;
        }
    };

    for k in 0..n_steps {
        let t_new = ic.time + (k + 1) as f64 * dk;
        let phi2 = fw_phi_squared(fw, t_new)?;
        let d_node_v: Vec<f64> = v_nodes.iter().map(|&v| 0.5 * phi2 * v * v).collect();

        // alternate the splitting order to cancel first-order splitting bias
        if k % 2 == 0 {
            sweep_v(&mut st, &d_node_v, k)?;
            sweep_s(&mut st);
        } else {
            sweep_s(&mut st);
            sweep_v(&mut st, &d_node_v, k)?;
        }

        max_undershoot = max_undershoot.min(st.p.iter().copied().fold(0.0_f64, f64::min));
        mass_curve.push((t_new, cell * interior_sum(&st.p, 2)));
        if snaps.contains(&(k + 1)) {
            checkpoints.push(DensityField {
                grid: grid.clone(),
                values: st.p.clone(),
                time: t_new,
                initial_mass: ic.initial_mass,
            });
        }
    }

    Ok(FpeTrajectory {
        grid: grid.clone(),
        checkpoints,
        mass_curve,
        leaks: st.leaks,
        max_undershoot,
        max_cell_peclet: st.max_peclet,
    })
}

/// Solves the 1-D consumption equation on the given grid from a Gaussian
/// initial density at x = 1, up to `horizon`. The final density is the single
/// checkpoint; the mass curve is recorded every step.
pub fn solve_fpe_1d(
    constants: &CalibratedConstants,
    ratio: f64,
    grid: &Grid,
    horizon: f64,
) -> Result<FpeTrajectory, FpeError> {
    let fw = FwApproximation::new(constants.psi, constants.phi, DEFAULT_CONSTITUENTS)?;
    solve_fpe_1d_with(&fw, ratio, grid, horizon)
}

/// 1-D solve with an explicit index approximation.
pub fn solve_fpe_1d_with(
    fw: &FwApproximation,
    ratio: f64,
    grid: &Grid,
    horizon: f64,
) -> Result<FpeTrajectory, FpeError> {
    if grid.dims() != 1 {
        return Err(FpeError::WrongDims { need: 1, got: grid.dims() });
    }
    if !(ratio > 0.0) {
        return Err(FpeError::NonPositiveRatio(ratio));
    }
    let dk = grid.dk;
    if horizon < dk {
        return Err(FpeError::ShortHorizon { dk, horizon });
    }
    let ic = initial_density(grid, &[1.0], &[DEFAULT_IC_SIGMA])?;
    let n_steps = (horizon / dk).round() as usize;
    let dx = grid.spacings[0];
    let nodes = grid.nodes(0);
    let half = half_nodes(&nodes);
    let n = grid.counts[0];
    let drain = 1.0 / ratio; // zero for an infinite ratio
    let a_half: Vec<f64> = half.iter().map(|&x| fw.psi * x - drain).collect();
    let diag_string = format!("{} cells, dk {}", n, dk);

    let mut p = ic.values;
    let mut mass_curve = vec![(0.0, dx * interior_sum(&p, 1))];
    let mut leaks = EdgeLeaks::zeros(1);
    let mut max_undershoot = 0.0_f64;
    let mut max_peclet = 0.0_f64;
    let mut buf = vec![0.0_f64; n - 1];

    for k in 0..n_steps {
        let t_new = (k + 1) as f64 * dk;
        let phi2 = fw_phi_squared(fw, t_new)?;
        let d_node: Vec<f64> = nodes.iter().map(|&x| 0.5 * phi2 * x * x).collect();
        let op = LineOp::build(&a_half, &d_node, dx, dk).ok_or(FpeError::SolveFailure {
            step: k,
            axis: 0,
            line: 0,
            diag: diag_string.clone(),
        })?;
        if k == 0 || k + 1 == n_steps {
            max_peclet = max_peclet.max(op.peclet);
        }
        for j in 1..n {
            buf[j - 1] = p[[j, 0]];
        }
        let (f_lo, f_hi) = op.advance(&mut buf);
        for j in 1..n {
            p[[j, 0]] = buf[j - 1];
        }
        leaks.per_axis[0].0 += -f_lo * dk;
        leaks.per_axis[0].1 += f_hi * dk;
        max_undershoot = max_undershoot.min(p.iter().copied().fold(0.0_f64, f64::min));
        mass_curve.push((t_new, dx * interior_sum(&p, 1)));
    }

    let final_time = n_steps as f64 * dk;
    Ok(FpeTrajectory {
        grid: grid.clone(),
        checkpoints: vec![DensityField {
            grid: grid.clone(),
            values: p,
            time: final_time,
            initial_mass: 1.0,
        }],
        mass_curve,
        leaks,
        max_undershoot,
        max_cell_peclet: max_peclet,
    })
}

/// Survival curve of a 1-D absorbing solve: interior mass over initial mass,
/// sampled at every step.
pub fn survival_curve(trajectory: &FpeTrajectory) -> Result<Vec<(f64, f64)>, FpeError> {
    if trajectory.grid.dims() != 1 {
        return Err(FpeError::WrongDims { need: 1, got: trajectory.grid.dims() });
    }
    let m0 = trajectory.mass_curve[0].1;
    Ok(trajectory.mass_curve.iter().map(|&(t, m)| (t, m / m0)).collect())
}

/// Linear interpolation of a (time, value) curve, clamped at the ends.
pub fn survival_at(curve: &[(f64, f64)], t: f64) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    if t <= curve[0].0 {
        return curve[0].1;
    }
    if t >= curve[curve.len() - 1].0 {
        return curve[curve.len() - 1].1;
    }
    let i = curve.partition_point(|&(tt, _)| tt <= t);
    let (t0, s0) = curve[i - 1];
    let (t1, s1) = curve[i];
    s0 + (s1 - s0) * (t - t0) / (t1 - t0)
}

/// How to account for survival mass remaining at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailHandling {
    /// Integrate the curve as given; remaining mass is dropped.
    Truncate,
    /// Add an exponential-tail estimate fitted to the last tenth of the curve.
    ExponentialTail,
}

/// Mean first-passage time extracted from a survival curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfptEstimate {
    /// Trapezoidal integral of S plus any tail estimate.
    pub value: f64,
    /// Fraction of the value contributed by the tail estimate.
    pub tail_share: f64,
    /// Survival remaining at the horizon.
    pub survival_at_horizon: f64,
    /// Set when more than 5% of the mass survives the horizon: the integral
    /// is then dominated by extrapolation and the horizon should be extended.
    pub horizon_warning: bool,
}

/// Integrates a survival curve into a mean first-passage time:
/// `E[tau] = int S(t) dt` by trapezoid up to `horizon`, with the remaining
/// tail handled as requested. The tail fit assumes exponential decay over the
/// last tenth of the integrated span.
pub fn mfpt_from_survival(curve: &[(f64, f64)], horizon: f64, tail: TailHandling) -> MfptEstimate {
    let pts: Vec<(f64, f64)> = curve.iter().copied().filter(|&(t, _)| t <= horizon + 1e-12).collect();
    let mut integral = 0.0;
    for w in pts.windows(2) {
        integral += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    let (t_end, s_end) = *pts.last().unwrap_or(&(0.0, 0.0));
    let t_start = pts.first().map_or(0.0, |p| p.0);
    let mut tail_value = 0.0;
    if let TailHandling::ExponentialTail = tail {
        let span = t_end - t_start;
        if s_end > 0.0 && span > 0.0 {
            let t_fit = t_end - 0.1 * span;
            let s_fit = survival_at(&pts, t_fit);
            if s_fit > s_end {
                let rate = (s_fit / s_end).ln() / (t_end - t_fit);
                tail_value = s_end / rate;
            }
        }
    }
    let value = integral + tail_value;
    MfptEstimate {
        value,
        tail_share: if value > 0.0 { tail_value / value } else { 0.0 },
        survival_at_horizon: s_end,
        horizon_warning: s_end > 0.05,
    }
}

/// Exceedance probability from a 2-D field, both raw and renormalized by the
/// remaining interior mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    /// Integral of the truncated density above the threshold.
    pub raw: f64,
    /// The same integral divided by the interior mass.
    pub renormalized: f64,
}

/// Probability that the first coordinate exceeds `threshold`: the first-axis
/// marginal is integrated above the threshold by trapezoid, with the cell
/// containing the threshold split linearly.
pub fn exceedance_from_density(field: &DensityField, threshold: f64) -> Result<Exceedance, FpeError> {
    if field.grid.dims() != 2 {
        return Err(FpeError::WrongDims { need: 2, got: field.grid.dims() });
    }
    let (v_marg, _) = marginals(field)?;
    let dh = field.grid.spacings[0];
    let v_max = field.grid.extent(0);
    if threshold > v_max {
        return Err(FpeError::ThresholdBeyondGrid { threshold, max: v_max });
    }
    let mass = field.interior_mass();
    let y = threshold.max(0.0);
    let n = field.grid.counts[0];
    let j_cell = ((y / dh).floor() as usize).min(n - 1);
    let v_lo = j_cell as f64 * dh;
    let frac = (y - v_lo) / dh;
    let m_at_y = v_marg[j_cell] * (1.0 - frac) + v_marg[j_cell + 1] * frac;
    let mut raw = 0.5 * (m_at_y + v_marg[j_cell + 1]) * ((j_cell + 1) as f64 * dh - y);
    for j in j_cell + 1..n {
        raw += 0.5 * (v_marg[j] + v_marg[j + 1]) * dh;
    }
    Ok(Exceedance { raw, renormalized: if mass > 0.0 { raw / mass } else { 0.0 } })
}

/// Axis marginals of a 2-D field by trapezoidal integration over the other
/// axis; with zero boundaries this is the spacing times the interior sum.
pub fn marginals(field: &DensityField) -> Result<(Vec<f64>, Vec<f64>), FpeError> {
    if field.grid.dims() != 2 {
        return Err(FpeError::WrongDims { need: 2, got: field.grid.dims() });
    }
    let (rows, cols) = field.values.dim();
    let (dh, dm) = (field.grid.spacings[0], field.grid.spacings[1]);
    let mut v_marg = vec![0.0; rows];
    let mut s_marg = vec![0.0; cols];
    for j in 1..rows - 1 {
        for l in 1..cols - 1 {
            let p = field.values[[j, l]];
            v_marg[j] += p * dm;
            s_marg[l] += p * dh;
        }
    }
    Ok((v_marg, s_marg))
}

/// Initial-condition mass captured by extending the domain: the difference of
/// the continuum-normalized Gaussian quadratures over the two grids. Zero for
/// identical grids; grows with sigma as the tails thicken.
pub fn boundary_truncation_error(
    grid: &Grid,
    extended: &Grid,
    center: &[f64],
    sigmas: &[f64],
) -> Result<f64, FpeError> {
    let dims = grid.dims();
    if extended.dims() != dims || center.len() != dims || sigmas.len() != dims {
        return Err(FpeError::DimMismatch);
    }
    for a in 0..dims {
        if extended.extent(a) < grid.extent(a) - 1e-12 {
            return Err(FpeError::NotContained(a));
        }
    }
    // Trapezoid of the normalized Gaussian over the extended-grid nodes at or
    // beyond `from`. The strip beyond the base extent is integrated directly:
    // subtracting two O(1) quadratures would round tail masses of order
    // 1e-40 to zero.
    let axis_quad = |a: usize, from: f64| -> f64 {
        let nodes = extended.nodes(a);
        let norm = 1.0 / (sigmas[a] * (2.0 * std::f64::consts::PI).sqrt());
        let lo = nodes.partition_point(|&x| x < from - 1e-12);
        if lo + 1 >= nodes.len() {
            return 0.0;
        }
        let mut sum = 0.0;
        for (i, &x) in nodes.iter().enumerate().skip(lo) {
            let z = (x - center[a]) / sigmas[a];
            let w = if i == lo || i == nodes.len() - 1 { 0.5 } else { 1.0 };
            sum += w * norm * (-0.5 * z * z).exp();
        }
        sum * extended.spacings[a]
    };
    // For a product density the mass between the two domains decomposes as
    // delta_0 * Q_1(base) + Q_0(ext) * delta_1, with delta_a the strip
    // integral beyond the base extent. Every term is non-negative.
    let delta: Vec<f64> = (0..dims).map(|a| axis_quad(a, grid.extent(a))).collect();
    if dims == 1 {
        return Ok(delta[0]);
    }
    let q0_ext = axis_quad(0, 0.0);
    let q1_base = axis_quad(1, 0.0) - delta[1];
    Ok(delta[0] * q1_base + q0_ext * delta[1])
}
