//! Backward induction for the stopping problem dual to the best-response LP.
//!
//! With `y[N+1] = 0`, the value of an active agent at time `i >= 1` is the
//! least `y >= 0` with `M^T y >= r[i] + y[i+1]`, equivalently the solution of
//! the complementarity problem `min(y, M^T y - r[i] - y[i+1]) = 0`. At the
//! initial time the bound is direct, `y[0] = max(0, r[0] + y[1])`. The value
//! of the population is `<y[0], m0>`.

use crate::error::{Error, Result};
use crate::grids::{MeasureFlow, TransitionOperator};
use crate::linalg::{dot, solve_tridiagonal};

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingValue {
    /// Value of an active agent at each time and node.
    pub values: MeasureFlow,
    /// `true` where stopping is optimal; ties count as stopping.
    pub stop_region: Vec<Vec<bool>>,
    /// Policy-iteration sweeps summed over all time steps.
    pub sweeps: usize,
}

impl StoppingValue {
    pub fn value(&self, initial: &[f64]) -> f64 {
        dot(self.values.row(0), initial)
    }

    pub fn stops(&self, i: usize, j: usize) -> bool {
        self.stop_region[i][j]
    }
}

/// Solves `min(y, N y - q) = 0` for a tridiagonal M-matrix `N` by policy
/// iteration. Returns the solution and the number of sweeps.
pub fn solve_obstacle_lcp(n_op: &TransitionOperator, q: &[f64]) -> Result<(Vec<f64>, usize)> {
    let n = n_op.dim();
    let mut stop: Vec<bool> = q.iter().map(|&v| v <= 0.0).collect();
    let mut y = vec![0.0; n];
    for sweep in 1..=n + 2 {
        let mut sub = vec![0.0; n];
        let mut main = vec![1.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for j in 0..n {
            if !stop[j] {
                sub[j] = n_op.sub[j];
                main[j] = n_op.main[j];
                sup[j] = n_op.sup[j];
                rhs[j] = q[j];
            }
        }
        y = solve_tridiagonal(&sub, &main, &sup, &rhs)?;
        let ny = n_op.apply(&y);
        let next: Vec<bool> = (0..n).map(|j| y[j] <= ny[j] - q[j]).collect();
        if next == stop {
            for (j, v) in y.iter_mut().enumerate() {
                if stop[j] {
                    *v = 0.0;
                }
            }
            return Ok((y, sweep));
        }
        stop = next;
    }
    Err(Error::Numerical(
        "policy iteration for the stopping problem did not settle".into(),
    ))
}

/// Value function and stop region for per-node rewards `rewards` and
/// implicit-scheme matrix `op`.
pub fn dp_stopping_oracle(rewards: &MeasureFlow, op: &TransitionOperator) -> Result<StoppingValue> {
    let (n_times, n) = rewards.shape();
    if op.dim() != n {
        return Err(Error::ShapeMismatch(format!(
            "rewards with {n} nodes against an operator of size {}",
            op.dim()
        )));
    }
    if n_times == 0 {
        return Err(Error::ShapeMismatch("rewards without time levels".into()));
    }
    if !op.is_z_matrix() {
        return Err(Error::Numerical(
            "transition matrix has positive off-diagonal entries".into(),
        ));
    }
    let mt = op.transposed();
    let mut values = MeasureFlow::zeros(n_times, n);
    let mut stop_region = vec![vec![true; n]; n_times];
    let mut sweeps = 0;
    let mut next = vec![0.0; n];
    for i in (1..n_times).rev() {
        let q: Vec<f64> = rewards.row(i).iter().zip(&next).map(|(r, v)| r + v).collect();
        let (y, s) = solve_obstacle_lcp(&mt, &q)?;
        sweeps += s;
        for j in 0..n {
            stop_region[i][j] = y[j] <= 0.0;
        }
        values.row_mut(i).copy_from_slice(&y);
        next = y;
    }
    for j in 0..n {
        let cont = rewards.get(0, j) + next[j];
        stop_region[0][j] = cont <= 0.0;
        values.set(0, j, cont.max(0.0));
    }
    Ok(StoppingValue {
        values,
        stop_region,
        sweeps,
    })
}
