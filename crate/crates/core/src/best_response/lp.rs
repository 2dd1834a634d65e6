use crate::error::{Error, Result};
use crate::grids::{MeasureFlow, TransitionOperator};
use crate::linalg::{dot, CscMatrix};

use super::{ipm, simplex};

/// `max c.x  s.t.  A x <= b, x >= 0` over the nodes of a measure flow.
///
/// Variable `i * n_nodes + j` is the mass at time `i`, node `j`. The first
/// `n_nodes` rows bound the initial masses, followed by one block of
/// `n_nodes` Fokker-Planck rows per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: CscMatrix,
    pub rhs: Vec<f64>,
    pub n_times: usize,
    pub n_nodes: usize,
}

impl LpProblem {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.rhs.len()
    }

    pub fn var_index(&self, i: usize, j: usize) -> usize {
        i * self.n_nodes + j
    }

    /// `(time, node)` of a variable.
    pub fn var_position(&self, k: usize) -> (usize, usize) {
        (k / self.n_nodes, k % self.n_nodes)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// Largest violation of `A x <= b` and `x >= 0`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ax = self.constraints.mul_vec(x);
        let rows = ax
            .iter()
            .zip(self.rhs.iter())
            .fold(0.0f64, |m, (a, b)| m.max(a - b));
        let neg = x.iter().fold(0.0f64, |m, &v| m.max(-v));
        rows.max(neg)
    }
}

/// LP whose feasible set is the discrete constraint set of `initial` under
/// `op`, with objective coefficients `rewards`.
pub fn build_lp_from_rewards(
    rewards: &MeasureFlow,
    op: &TransitionOperator,
    initial: &[f64],
) -> Result<LpProblem> {
    let (n_times, n) = rewards.shape();
    if op.dim() != n || initial.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "rewards with {n} nodes, operator of size {}, initial of length {}",
            op.dim(),
            initial.len()
        )));
    }
    if n_times < 2 {
        return Err(Error::ShapeMismatch("an LP needs at least two time levels".into()));
    }
    if initial.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(Error::InvalidParameter("initial masses must be finite and >= 0".into()));
    }
    let n_vars = n_times * n;
    let n_rows = n_times * n;
    let mut triplets = Vec::with_capacity(n + (n_times - 1) * 4 * n);
    for j in 0..n {
        triplets.push((j, j, 1.0));
    }
    for i in 0..n_times - 1 {
        let row0 = n + i * n;
        let cur = i * n;
        let next = (i + 1) * n;
        for j in 0..n {
            let r = row0 + j;
            triplets.push((r, cur + j, -1.0));
            triplets.push((r, next + j, op.main[j]));
            if j > 0 {
                triplets.push((r, next + j - 1, op.sub[j]));
            }
            if j + 1 < n {
                triplets.push((r, next + j + 1, op.sup[j]));
            }
        }
    }
    let constraints = CscMatrix::from_triplets(n_rows, n_vars, &triplets);
    let mut rhs = vec![0.0; n_rows];
    rhs[..n].copy_from_slice(initial);
    Ok(LpProblem {
        objective: rewards.as_slice().to_vec(),
        constraints,
        rhs,
        n_times,
        n_nodes: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpMethod {
    InteriorPoint,
    Simplex,
    Trivial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub flow: MeasureFlow,
    pub value: f64,
    pub iterations: usize,
    pub method: LpMethod,
}

/// Largest problem handed to the dense simplex fallback.
pub const SIMPLEX_FALLBACK_MAX_VARS: usize = 500;

/// Solves `p` to relative duality gap `tol`.
///
/// The interior-point method runs first; small problems on which it fails
/// are retried with the dense simplex. Tiny negative entries left by the
/// interior-point method are clamped to zero.
pub fn solve_lp(p: &LpProblem, tol: f64) -> Result<LpSolution> {
    let to_solution = |x: Vec<f64>, iterations, method| -> Result<LpSolution> {
        let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
        let value = p.objective_value(&x);
        Ok(LpSolution {
            flow: MeasureFlow::from_vec(p.n_times, p.n_nodes, x)?,
            value,
            iterations,
            method,
        })
    };
    if p.objective.iter().all(|&c| c <= 0.0) {
        // the zero flow is optimal
        return to_solution(vec![0.0; p.n_vars()], 0, LpMethod::Trivial);
    }
    match ipm::solve(p, &ipm::IpmSettings::with_tol(tol)) {
        Ok(sol) => to_solution(sol.x, sol.iterations, LpMethod::InteriorPoint),
        Err(err) if p.n_vars() <= SIMPLEX_FALLBACK_MAX_VARS => {
            log::warn!("interior point failed ({err}); retrying with simplex");
            let sol = simplex::solve(p)?;
            to_solution(sol.x, sol.pivots, LpMethod::Simplex)
        }
        Err(err) => Err(err),
    }
}
