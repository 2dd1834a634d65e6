//! Dense tableau simplex with Bland's rule for `max c.x, A x <= b, x >= 0`
//! with `b >= 0`, so the slack basis is feasible.

use crate::error::{Error, Result};

use super::lp::LpProblem;

#[derive(Debug, Clone)]
pub struct SimplexSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-11;

pub fn solve(p: &LpProblem) -> Result<SimplexSolution> {
    let (m, n) = (p.n_constraints(), p.n_vars());
    if p.rhs.iter().any(|&b| b < 0.0) {
        return Err(Error::InvalidParameter(
            "simplex needs a nonnegative right-hand side".into(),
        ));
    }
    let width = n + m + 1;
    // rows 0..m are constraints, row m is the reduced-cost row
    let mut t = vec![0.0; (m + 1) * width];
    let dense = p.constraints.to_dense();
    for i in 0..m {
        t[i * width..i * width + n].copy_from_slice(&dense[i]);
        t[i * width + n + i] = 1.0;
        t[i * width + n + m] = p.rhs[i];
    }
    for j in 0..n {
        t[m * width + j] = -p.objective[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let max_pivots = 50 * (n + m) + 1000;
    let mut pivots = 0;
    loop {
        let entering = (0..n + m).find(|&j| t[m * width + j] < -PIVOT_TOL);
        let Some(e) = entering else { break };
        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i * width + e];
            if a > PIVOT_TOL {
                let ratio = t[i * width + n + m] / a;
                let better = match leaving {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && basis[i] < basis[li])
                    }
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
        }
        let Some((r, _)) = leaving else {
            return Err(Error::Numerical("simplex: objective unbounded".into()));
        };
        let piv = t[r * width + e];
        for v in &mut t[r * width..(r + 1) * width] {
            *v /= piv;
        }
        let pivot_row: Vec<f64> = t[r * width..(r + 1) * width].to_vec();
        for i in 0..=m {
            if i == r {
                continue;
            }
            let f = t[i * width + e];
            if f != 0.0 {
                for (v, pr) in t[i * width..(i + 1) * width].iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
            }
        }
        basis[r] = e;
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::SolverFailure {
                reason: "simplex pivot limit".into(),
                iterations: pivots,
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
                gap: f64::NAN,
            });
        }
    }
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[i * width + n + m].max(0.0);
        }
    }
    let value = p.objective_value(&x);
    Ok(SimplexSolution { x, value, pivots })
}
