//! Uniform time/state grids, measure flows, and the implicit Fokker-Planck
//! step that defines the discrete constraint sets.
//!
//! A flow `m` belongs to the constraint set of an initial mass vector `m0`
//! when
//!
//! ```text
//! m[0] <= m0,    m[i] >= M m[i+1]  for i = 0..n_t-1,    m >= 0
//! ```
//!
//! componentwise, where `M = I - dt A` is the implicit-scheme matrix and `A`
//! the discrete forward (Fokker-Planck) operator. Equality in every step is
//! the flow of agents who never stop.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::processes::{integrate, Diffusion};

/// Default time step: one quarter.
pub const DEFAULT_DT_YEARS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    /// Cell count; the grid has `n_x + 1` nodes.
    pub n_x: usize,
    pub t_horizon: f64,
    /// Time-step count; the grid has `n_t + 1` time levels.
    pub n_t: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_x: usize, t_horizon: f64, n_t: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "state bounds must satisfy x_min < x_max (got {x_min}, {x_max})"
            )));
        }
        if n_x < 2 {
            return Err(Error::InvalidParameter(format!("n_x must be >= 2, got {n_x}")));
        }
        if n_t < 1 {
            return Err(Error::InvalidParameter(format!("n_t must be >= 1, got {n_t}")));
        }
        if !(t_horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {t_horizon}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_x,
            t_horizon,
            n_t,
        })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_x as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_horizon / self.n_t as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_x + 1
    }

    pub fn n_times(&self) -> usize {
        self.n_t + 1
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|j| self.node(j)).collect()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    /// Same time grid, same spacing, `extra` additional nodes above `x_max`.
    pub fn padded(&self, extra: usize) -> Self {
        Self {
            x_max: self.x_max + extra as f64 * self.dx(),
            n_x: self.n_x + extra,
            ..*self
        }
    }
}

/// Values on the `(n_t + 1) x (n_x + 1)` time-node lattice, row-major by time.
///
/// Used both for measure flows (masses, GW) and for per-node reward
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    n_times: usize,
    n_nodes: usize,
    values: Vec<f64>,
}

impl MeasureFlow {
    pub fn zeros(n_times: usize, n_nodes: usize) -> Self {
        Self {
            n_times,
            n_nodes,
            values: vec![0.0; n_times * n_nodes],
        }
    }

    pub fn for_grid(grid: &GridSpec) -> Self {
        Self::zeros(grid.n_times(), grid.n_nodes())
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_times = rows.len();
        let n_nodes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_nodes) {
            return Err(Error::ShapeMismatch("ragged measure-flow rows".into()));
        }
        Ok(Self {
            n_times,
            n_nodes,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_vec(n_times: usize, n_nodes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_times * n_nodes {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n_times}x{n_nodes} flow",
                values.len()
            )));
        }
        Ok(Self {
            n_times,
            n_nodes,
            values,
        })
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_times, self.n_nodes)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_nodes + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_nodes + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_nodes.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn total_mass(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    pub fn total_masses(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }

    /// Frobenius inner product with a flow of the same shape.
    pub fn dot(&self, other: &MeasureFlow) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `self <- (1 - w) self + w other`.
    pub fn blend(&mut self, other: &MeasureFlow, w: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "cannot blend {:?} with {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a = (1.0 - w) * *a + w * b;
        }
        Ok(())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with a `# grid ...` metadata line, a header of node coordinates
    /// and one row per time level.
    pub fn to_csv(&self, grid: &GridSpec) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# grid x_min={} x_max={} n_x={} t_horizon={} n_t={}",
            grid.x_min, grid.x_max, grid.n_x, grid.t_horizon, grid.n_t
        );
        out.push_str("time");
        for x in grid.nodes() {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
        for (i, row) in self.rows().enumerate() {
            let _ = write!(out, "{}", grid.time(i));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, grid: &GridSpec, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv(grid)).map_err(|e| Error::io(path, e))
    }

    /// Parses the format of [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str) -> Result<(GridSpec, MeasureFlow)> {
        let bad = |m: String| Error::Parse {
            path: "<measure flow>".into(),
            message: m,
        };
        let mut lines = text.lines();
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix("# grid "))
            .ok_or_else(|| bad("missing '# grid' metadata line".into()))?;
        let mut fields = std::collections::HashMap::new();
        for kv in meta.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed metadata item '{kv}'")))?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .ok_or_else(|| bad(format!("metadata lacks '{k}'")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("metadata '{k}': {e}")))
        };
        let grid = GridSpec::new(
            num("x_min")?,
            num("x_max")?,
            num("n_x")? as usize,
            num("t_horizon")?,
            num("n_t")? as usize,
        )?;
        lines.next().ok_or_else(|| bad("missing header row".into()))?;
        let mut rows = Vec::with_capacity(grid.n_times());
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .skip(1)
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("data line {}: {e}", lineno + 3)))?;
            rows.push(vals);
        }
        let flow = MeasureFlow::from_rows(rows)?;
        if flow.shape() != (grid.n_times(), grid.n_nodes()) {
            return Err(bad(format!(
                "flow shape {:?} does not match grid metadata",
                flow.shape()
            )));
        }
        Ok((grid, flow))
    }

    pub fn read_csv(path: &Path) -> Result<(GridSpec, MeasureFlow)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}

/// How the drift enters the transition rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScheme {
    /// Centred drift everywhere, exactly the textbook implicit scheme.
    /// Rates turn negative where `|mu| dx > 2 sigma2`.
    Central,
    /// Centred drift where both rates are nonnegative, first-order upwind
    /// drift at the remaining nodes. Always yields an M-matrix.
    #[default]
    Hybrid,
}

/// Tridiagonal implicit-scheme matrix `M`.
///
/// Row `j` reads `(M m)_j = sub[j] m[j-1] + main[j] m[j] + sup[j] m[j+1]`,
/// so the constraint is `m_i >= M m_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOperator {
    pub sub: Vec<f64>,
    pub main: Vec<f64>,
    pub sup: Vec<f64>,
}

impl TransitionOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            sub: vec![0.0; n],
            main: vec![1.0; n],
            sup: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.main.len()
    }

    /// `M v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|j| {
                let mut s = self.main[j] * v[j];
                if j > 0 {
                    s += self.sub[j] * v[j - 1];
                }
                if j + 1 < n {
                    s += self.sup[j] * v[j + 1];
                }
                s
            })
            .collect()
    }

    /// Solves `M x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        solve_tridiagonal(&self.sub, &self.main, &self.sup, rhs)
    }

    /// Diagonals of `M^T` in the same layout.
    pub fn transposed(&self) -> TransitionOperator {
        let n = self.dim();
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for j in 0..n {
            if j > 0 {
                sub[j] = self.sup[j - 1];
            }
            if j + 1 < n {
                sup[j] = self.sub[j + 1];
            }
        }
        TransitionOperator {
            sub,
            main: self.main.clone(),
            sup,
        }
    }

    /// True when every off-diagonal entry is nonpositive.
    pub fn is_z_matrix(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (j == 0 || self.sub[j] <= 0.0) && (j + 1 == n || self.sup[j] <= 0.0))
    }

    /// Column sums; `>= 1` means the step never creates mass.
    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|j| {
                let mut s = self.main[j];
                if j > 0 {
                    s += self.sup[j - 1];
                }
                if j + 1 < n {
                    s += self.sub[j + 1];
                }
                s
            })
            .collect()
    }
}

/// Rates `(up, down)` out of a node with drift `mu` and half squared
/// volatility `sigma2`.
fn node_rates(mu: f64, sigma2: f64, dx: f64, scheme: DriftScheme) -> (f64, f64) {
    let diff = sigma2 / (dx * dx);
    let adv = mu / (2.0 * dx);
    let central = (diff + adv, diff - adv);
    match scheme {
        DriftScheme::Central => central,
        DriftScheme::Hybrid if central.0 >= 0.0 && central.1 >= 0.0 => central,
        DriftScheme::Hybrid => (diff + mu.max(0.0) / dx, diff + (-mu).max(0.0) / dx),
    }
}

/// Implicit-scheme matrix for `params` on `grid`.
///
/// Under [`DriftScheme::Central`] the coefficients are
/// `main = 1 + 2 sigma2_j dt/dx^2`,
/// `sup = -dt (sigma2_{j+1}/dx^2 - mu_{j+1}/(2dx))`,
/// `sub = -dt (sigma2_{j-1}/dx^2 + mu_{j-1}/(2dx))`.
/// Ghost nodes beyond either end carry zero mass, so rates pointing off the
/// grid remain on the diagonal and that mass is lost.
pub fn build_transition<D: Diffusion + ?Sized>(
    params: &D,
    grid: &GridSpec,
    scheme: DriftScheme,
) -> TransitionOperator {
    let n = grid.n_nodes();
    let dx = grid.dx();
    let dt = grid.dt();
    let rates: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let (mu, s2) = params.drift_diffusion(grid.node(j));
            node_rates(mu, s2, dx, scheme)
        })
        .collect();
    let mut op = TransitionOperator::identity(n);
    for j in 0..n {
        let (up, down) = rates[j];
        op.main[j] = 1.0 + dt * (up + down);
        if j > 0 {
            op.sub[j] = -dt * rates[j - 1].0;
        }
        if j + 1 < n {
            op.sup[j] = -dt * rates[j + 1].1;
        }
    }
    op
}

/// Masses proportional to the cell average of `density` around each node,
/// rescaled to sum to `total_mass`.
pub fn discretize_density<F: Fn(f64) -> f64>(
    density: F,
    grid: &GridSpec,
    total_mass: f64,
) -> Result<Vec<f64>> {
    let dx = grid.dx();
    let raw: Vec<f64> = (0..grid.n_nodes())
        .map(|j| {
            let x = grid.node(j);
            let lo = (x - 0.5 * dx).max(grid.x_min);
            let hi = (x + 0.5 * dx).min(grid.x_max);
            integrate(&density, lo, hi, 16).max(0.0)
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    if !(sum > 1e-300) || !sum.is_finite() {
        return Err(Error::EmptySupport(sum));
    }
    let mut masses: Vec<f64> = raw.iter().map(|v| v * total_mass / sum).collect();
    // put the rounding residue on the heaviest node so the sum is exact
    let residue = total_mass - masses.iter().sum::<f64>();
    if let Some((jmax, _)) = masses
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
    {
        masses[jmax] += residue;
    }
    Ok(masses)
}

/// All mass at the node nearest to `x`.
pub fn point_mass(grid: &GridSpec, x: f64, total_mass: f64) -> Vec<f64> {
    let j = ((x - grid.x_min) / grid.dx()).round().clamp(0.0, grid.n_x as f64) as usize;
    let mut m = vec![0.0; grid.n_nodes()];
    m[j] = total_mass;
    m
}

/// Flow with `M m[i+1] = m[i]` at every step, `m[0] = initial`.
pub fn evolve_equality(
    initial: &[f64],
    op: &TransitionOperator,
    n_t: usize,
) -> Result<MeasureFlow> {
    if initial.len() != op.dim() {
        return Err(Error::ShapeMismatch(format!(
            "initial vector of length {} for an operator of size {}",
            initial.len(),
            op.dim()
        )));
    }
    let n = op.dim();
    let mut flow = MeasureFlow::zeros(n_t + 1, n);
    flow.row_mut(0).copy_from_slice(initial);
    for i in 0..n_t {
        let next = op.solve(flow.row(i))?;
        flow.row_mut(i + 1).copy_from_slice(&next);
    }
    Ok(flow)
}

/// First violated constraint of a flow, if any.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityViolation {
    Shape(String),
    Negative { time: usize, node: usize, value: f64 },
    InitialMass { node: usize, excess: f64 },
    FokkerPlanck { time: usize, node: usize, excess: f64 },
}

impl std::fmt::Display for FeasibilityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Shape(s) => write!(f, "shape mismatch: {s}"),
            Self::Negative { time, node, value } => {
                write!(f, "negative mass {value:.3e} at time {time}, node {node}")
            }
            Self::InitialMass { node, excess } => {
                write!(f, "initial mass exceeded by {excess:.3e} at node {node}")
            }
            Self::FokkerPlanck { time, node, excess } => write!(
                f,
                "Fokker-Planck inequality violated by {excess:.3e} between times {time} and {} at node {node}",
                time + 1
            ),
        }
    }
}

/// Checks every constraint with absolute tolerance `tol`.
pub fn feasibility_violation(
    flow: &MeasureFlow,
    op: &TransitionOperator,
    initial: &[f64],
    tol: f64,
) -> Option<FeasibilityViolation> {
    let n = op.dim();
    if flow.n_nodes() != n || initial.len() != n || flow.n_times() == 0 {
        return Some(FeasibilityViolation::Shape(format!(
            "flow {:?}, operator {n}, initial {}",
            flow.shape(),
            initial.len()
        )));
    }
    for i in 0..flow.n_times() {
        for (j, &v) in flow.row(i).iter().enumerate() {
            if v < -tol || !v.is_finite() {
                return Some(FeasibilityViolation::Negative {
                    time: i,
                    node: j,
                    value: v,
                });
            }
        }
    }
    for (j, (&m, &m0)) in flow.row(0).iter().zip(initial.iter()).enumerate() {
        if m > m0 + tol {
            return Some(FeasibilityViolation::InitialMass {
                node: j,
                excess: m - m0,
            });
        }
    }
    for i in 0..flow.n_times() - 1 {
        let pushed = op.apply(flow.row(i + 1));
        for (j, (&p, &cur)) in pushed.iter().zip(flow.row(i).iter()).enumerate() {
            if p > cur + tol {
                return Some(FeasibilityViolation::FokkerPlanck {
                    time: i,
                    node: j,
                    excess: p - cur,
                });
            }
        }
    }
    None
}

/// Largest violation of any constraint (0 for a feasible flow).
pub fn max_violation(flow: &MeasureFlow, op: &TransitionOperator, initial: &[f64]) -> f64 {
    let n = op.dim();
    if flow.n_nodes() != n || initial.len() != n || flow.n_times() == 0 {
        return f64::INFINITY;
    }
    let mut worst = (-flow.min_value()).max(0.0);
    for (&m, &m0) in flow.row(0).iter().zip(initial.iter()) {
        worst = worst.max(m - m0);
    }
    for i in 0..flow.n_times() - 1 {
        let pushed = op.apply(flow.row(i + 1));
        for (&p, &cur) in pushed.iter().zip(flow.row(i).iter()) {
            worst = worst.max(p - cur);
        }
    }
    worst
}

/// Membership test for the discrete constraint set.
pub fn check_feasible(
    flow: &MeasureFlow,
    op: &TransitionOperator,
    initial: &[f64],
    tol: f64,
) -> bool {
    feasibility_violation(flow, op, initial, tol).is_none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{
        calibrate_cir, calibrate_jacobi, cir_stationary_density, jacobi_stationary_density,
        CirParams, JacobiParams, StationaryMoments,
    };

    struct Still;
    impl Diffusion for Still {
        fn drift_diffusion(&self, _x: f64) -> (f64, f64) {
            (0.0, 0.0)
        }
    }

    fn uk_cir() -> CirParams {
        calibrate_cir(StationaryMoments::new(33.4, 11.0).unwrap(), 0.5).unwrap()
    }

    fn uk_jacobi() -> JacobiParams {
        calibrate_jacobi(StationaryMoments::new(0.4261, 0.0443).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 1.0, 10, 1.0, 1).is_err());
        assert!(GridSpec::new(0.0, 1.0, 1, 1.0, 1).is_err());
        assert!(GridSpec::new(0.0, 1.0, 2, 1.0, 0).is_err());
        let g = GridSpec::new(0.0, 1.0, 20, 5.0, 20).unwrap();
        assert_eq!(g.dx(), 0.05);
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.n_nodes(), 21);
    }

    #[test]
    fn zero_coefficients_give_identity() {
        let g = GridSpec::new(0.0, 1.0, 5, 1.0, 4).unwrap();
        for scheme in [DriftScheme::Central, DriftScheme::Hybrid] {
            assert_eq!(build_transition(&Still, &g, scheme), TransitionOperator::identity(6));
        }
    }

    #[test]
    fn central_coefficients_match_hand_values() {
        let p = uk_cir();
        // dx = 1, dt = 0.25
        let g = GridSpec::new(0.0, 60.0, 60, 1.0, 4).unwrap();
        let op = build_transition(&p, &g, DriftScheme::Central);
        let d2 = p.delta * p.delta;
        let j = 33;
        let s2 = |x: f64| d2 * x / 2.0;
        let mu = |x: f64| p.k * (p.theta - x);
        assert_eq!(op.main[j], 1.0 + 2.0 * s2(33.0) * 0.25);
        assert_eq!(op.sup[j], -0.25 * (s2(34.0) - mu(34.0) / 2.0));
        assert_eq!(op.sub[j], -0.25 * (s2(32.0) + mu(32.0) / 2.0));
        // node at exactly theta
        let g = GridSpec::new(0.4, 66.4, 66, 1.0, 4).unwrap();
        let op = build_transition(&p, &g, DriftScheme::Central);
        let main = op.main[33];
        assert!((g.node(33) - 33.4).abs() < 1e-12);
        assert!((main - (1.0 + 2.0 * (d2 * 33.4 / 2.0) * 0.25)).abs() < 1e-12);
        assert!((main - 31.24).abs() < 0.01, "main {main}");
        let hybrid = build_transition(&p, &g, DriftScheme::Hybrid);
        assert!((hybrid.main[33] - main).abs() < 1e-12);
    }

    #[test]
    fn cir_origin_row_is_drift_only() {
        let p = uk_cir();
        let g = GridSpec::new(0.0, 143.4, 20, 5.0, 20).unwrap();
        for scheme in [DriftScheme::Central, DriftScheme::Hybrid] {
            let op = build_transition(&p, &g, scheme);
            assert_eq!(op.sub[0], 0.0);
            // node 1 receives mass from node 0 only through the drift
            let expected = match scheme {
                DriftScheme::Central => -g.dt() * p.k * p.theta / (2.0 * g.dx()),
                DriftScheme::Hybrid => -g.dt() * p.k * p.theta / g.dx(),
            };
            assert!((op.sub[1] - expected).abs() < 1e-12);
        }
        let central = build_transition(&p, &g, DriftScheme::Central);
        assert_eq!(central.main[0], 1.0);
    }

    #[test]
    fn hybrid_is_an_m_matrix_that_never_creates_mass() {
        let g = GridSpec::new(0.0, 143.4, 20, 5.0, 20).unwrap();
        let op = build_transition(&uk_cir(), &g, DriftScheme::Hybrid);
        assert!(op.is_z_matrix());
        assert!(op.column_sums().iter().all(|&c| c >= 1.0 - 1e-12));
        assert!(op.main.iter().all(|&m| m >= 1.0));
        let s = GridSpec::new(0.0, 1.0, 20, 5.0, 20).unwrap();
        let op = build_transition(&uk_jacobi(), &s, DriftScheme::Hybrid);
        assert!(op.is_z_matrix());
        assert!(op.column_sums().iter().all(|&c| (c - 1.0).abs() < 1e-12));
        // the central scheme is not monotone on this grid
        let central = build_transition(&uk_jacobi(), &s, DriftScheme::Central);
        assert!(!central.is_z_matrix());
    }

    #[test]
    fn discretization_contracts() {
        let g = GridSpec::new(0.0, 1.0, 10, 1.0, 1).unwrap();
        let m = discretize_density(|_| 1.0, &g, 35.9).unwrap();
        // end cells are half as wide
        assert!((m[5] - 35.9 / 10.0).abs() < 1e-12);
        assert!((m[0] - 35.9 / 20.0).abs() < 1e-12);
        assert!((m.iter().sum::<f64>() - 35.9).abs() < 1e-12);

        let p = uk_cir();
        let g = GridSpec::new(0.0, 100.0, 50, 1.0, 1).unwrap();
        let m = discretize_density(|x| cir_stationary_density(&p, x).unwrap(), &g, 35.9).unwrap();
        assert_eq!(m.iter().sum::<f64>(), 35.9);
        assert!(m.iter().all(|&v| v >= 0.0));

        assert!(matches!(
            discretize_density(|_| 0.0, &g, 1.0),
            Err(Error::EmptySupport(_))
        ));
        let pm = point_mass(&g, 30.0, 2.0);
        assert_eq!(pm[15], 2.0);
        assert_eq!(pm.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn uniform_density_on_nodes_gives_equal_masses_with_matching_cells() {
        // with cells centred on nodes the interior nodes share mass equally
        let g = GridSpec::new(0.0, 1.0, 4, 1.0, 1).unwrap();
        let m = discretize_density(|_| 1.0, &g, 4.0).unwrap();
        assert!((m[1] - m[2]).abs() < 1e-12 && (m[2] - m[3]).abs() < 1e-12);
    }

    #[test]
    fn equality_evolution_basics() {
        let g = GridSpec::new(0.0, 1.0, 20, 5.0, 20).unwrap();
        let op = build_transition(&uk_jacobi(), &g, DriftScheme::Hybrid);
        let zero = evolve_equality(&vec![0.0; 21], &op, 20).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        let init: Vec<f64> = (0..21).map(|j| (j as f64).sin().abs()).collect();
        let id = evolve_equality(&init, &TransitionOperator::identity(21), 5).unwrap();
        for i in 0..6 {
            assert_eq!(id.row(i), init.as_slice());
        }
        let flow = evolve_equality(&init, &op, 20).unwrap();
        assert!(flow.min_value() >= 0.0);
        assert!(check_feasible(&flow, &op, &init, 1e-10));
    }

    #[test]
    fn jacobi_stationary_density_is_nearly_preserved() {
        let p = uk_jacobi();
        let g = GridSpec::new(0.0, 1.0, 100, 5.0, 20).unwrap();
        let op = build_transition(&p, &g, DriftScheme::Hybrid);
        let init =
            discretize_density(|x| jacobi_stationary_density(&p, x).unwrap(), &g, 47.0).unwrap();
        let flow = evolve_equality(&init, &op, g.n_t).unwrap();
        let l1: f64 = flow
            .row(g.n_t)
            .iter()
            .zip(init.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 <= 0.02 * 47.0, "L1 drift {l1}");
        let mass_loss = 1.0 - flow.total_mass(g.n_t) / 47.0;
        assert!(mass_loss.abs() <= 1e-3, "mass loss {mass_loss}");
    }

    #[test]
    fn cir_equality_evolution_conserves_mass_on_wide_grid() {
        let p = uk_cir();
        let g = GridSpec::new(0.0, 33.4 + 110.0, 80, 5.0, 20).unwrap();
        let op = build_transition(&p, &g, DriftScheme::Hybrid);
        let init =
            discretize_density(|x| cir_stationary_density(&p, x).unwrap(), &g, 35.9).unwrap();
        let flow = evolve_equality(&init, &op, g.n_t).unwrap();
        let loss = 1.0 - flow.total_mass(g.n_t) / 35.9;
        assert!((0.0..=1e-3).contains(&loss), "loss {loss}");
    }

    #[test]
    fn feasibility_checks() {
        let g = GridSpec::new(0.0, 143.4, 20, 5.0, 20).unwrap();
        let p = uk_cir();
        let op = build_transition(&p, &g, DriftScheme::Hybrid);
        let init =
            discretize_density(|x| cir_stationary_density(&p, x).unwrap(), &g, 35.9).unwrap();
        let flow = evolve_equality(&init, &op, g.n_t).unwrap();
        assert!(check_feasible(&flow, &op, &init, 1e-9));

        let mut inflated = flow.clone();
        for v in inflated.row_mut(0) {
            *v *= 1.5;
        }
        assert!(matches!(
            feasibility_violation(&inflated, &op, &init, 1e-9),
            Some(FeasibilityViolation::InitialMass { .. })
        ));

        for stop_at in [0, 1, 7, 20] {
            let mut truncated = flow.clone();
            for i in stop_at..=g.n_t {
                truncated.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
            // direct evaluation of each inequality
            for i in 0..g.n_t {
                let pushed = op.apply(truncated.row(i + 1));
                for j in 0..g.n_nodes() {
                    assert!(truncated.get(i, j) >= pushed[j] - 1e-9);
                }
            }
            assert!(check_feasible(&truncated, &op, &init, 1e-9));
        }
    }

    #[test]
    fn feasible_flows_lose_mass_over_time() {
        let g = GridSpec::new(0.0, 1.0, 20, 5.0, 20).unwrap();
        let op = build_transition(&uk_jacobi(), &g, DriftScheme::Hybrid);
        let init =
            discretize_density(|x| jacobi_stationary_density(&uk_jacobi(), x).unwrap(), &g, 1.0)
                .unwrap();
        let mut flow = evolve_equality(&init, &op, g.n_t).unwrap();
        // stop half of the agents at time 5
        for i in 5..=g.n_t {
            flow.row_mut(i).iter_mut().for_each(|v| *v *= 0.5);
        }
        assert!(check_feasible(&flow, &op, &init, 1e-12));
        let masses = flow.total_masses();
        assert!(masses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn csv_round_trip() {
        let g = GridSpec::new(0.0, 1.0, 3, 1.0, 2).unwrap();
        let flow = MeasureFlow::from_rows(vec![
            vec![0.1, 0.2, 0.3, 1.0 / 3.0],
            vec![0.0, 1e-17, 2.5, 3.0],
            vec![4.0, 5.0, 6.0, 7.0],
        ])
        .unwrap();
        let (g2, back) = MeasureFlow::from_csv(&flow.to_csv(&g)).unwrap();
        assert_eq!(g2, g);
        assert_eq!(back, flow);
    }
}
