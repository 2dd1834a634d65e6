//! Mehrotra predictor-corrector interior-point method for
//! `max c.x  s.t.  A x + w = b, x, w >= 0`.
//!
//! The dual is `min b.y  s.t.  A^T y - z = c, y, z >= 0`. Each iteration
//! solves the normal equations `(A D A^T + E) dy = r` with `D = X/Z`,
//! `E = W/Y`, whose band follows the time ordering of the rows.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, BandedCholesky};

use super::lp::LpProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmSettings {
    /// Relative duality gap at termination.
    pub gap_tol: f64,
    /// Primal residual at termination, relative to `1 + |b|`.
    pub primal_tol: f64,
    /// Dual residual at termination, relative to `1 + |c|`.
    pub dual_tol: f64,
    pub max_iter: usize,
    pub step_factor: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            primal_tol: 1e-11,
            dual_tol: 1e-9,
            max_iter: 200,
            step_factor: 0.995,
        }
    }
}

impl IpmSettings {
    pub fn with_tol(gap_tol: f64) -> Self {
        Self {
            gap_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub x: Vec<f64>,
    /// Dual multipliers of the rows, in the units of the original problem.
    pub y: Vec<f64>,
    pub iterations: usize,
    pub primal_value: f64,
    pub dual_value: f64,
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(1.0, f64::min)
}

struct Residuals {
    primal: Vec<f64>,
    dual: Vec<f64>,
}

pub fn solve(p: &LpProblem, s: &IpmSettings) -> Result<IpmSolution> {
    let a = &p.constraints;
    let (m, n) = (p.n_constraints(), p.n_vars());
    let c_scale = norm_inf(&p.objective).max(f64::MIN_POSITIVE);
    let b_scale = {
        let nb = norm_inf(&p.rhs);
        if nb > 0.0 {
            nb
        } else {
            1.0
        }
    };
    let c: Vec<f64> = p.objective.iter().map(|v| v / c_scale).collect();
    let b: Vec<f64> = p.rhs.iter().map(|v| v / b_scale).collect();
    let nb = norm_inf(&b);
    let nc = norm_inf(&c);

    let mut x = vec![1.0; n];
    let mut z = vec![1.0; n];
    let mut w = vec![1.0; m];
    let mut y = vec![1.0; m];

    let bw = a.normal_bandwidth();
    let mut normal = BandedCholesky::zeros(m, bw);

    let residuals = |x: &[f64], w: &[f64], y: &[f64], z: &[f64]| -> Residuals {
        let ax = a.mul_vec(x);
        let aty = a.mul_transpose_vec(y);
        Residuals {
            primal: (0..m).map(|i| b[i] - ax[i] - w[i]).collect(),
            dual: (0..n).map(|j| c[j] - aty[j] + z[j]).collect(),
        }
    };

    let mut last = (f64::NAN, f64::NAN, f64::NAN);
    for iter in 0..s.max_iter {
        let r = residuals(&x, &w, &y, &z);
        let pobj = dot(&c, &x);
        let dobj = dot(&b, &y);
        let rel_gap = (dobj - pobj).abs() / (1.0 + pobj.abs());
        let pres = norm_inf(&r.primal) / (1.0 + nb);
        let dres = norm_inf(&r.dual) / (1.0 + nc);
        last = (pres, dres, rel_gap);
        if !(rel_gap.is_finite() && pres.is_finite() && dres.is_finite()) {
            break;
        }
        if rel_gap <= s.gap_tol && pres <= s.primal_tol && dres <= s.dual_tol {
            return Ok(IpmSolution {
                x: x.iter().map(|v| v * b_scale).collect(),
                y: y.iter().map(|v| v * c_scale).collect(),
                iterations: iter,
                primal_value: pobj * b_scale * c_scale,
                dual_value: dobj * b_scale * c_scale,
            });
        }

        let d: Vec<f64> = x.iter().zip(&z).map(|(x, z)| x / z).collect();
        let e: Vec<f64> = w.iter().zip(&y).map(|(w, y)| w / y).collect();
        normal.assemble_normal(a, &d, &e);
        normal.factorize();

        // returns (dx, dw, dy, dz) for complementarity targets r_xz, r_wy
        let direction = |r_xz: &[f64], r_wy: &[f64]| {
            let t: Vec<f64> = (0..n).map(|j| d[j] * (r.dual[j] + r_xz[j] / x[j])).collect();
            let at = a.mul_vec(&t);
            let rhs: Vec<f64> = (0..m)
                .map(|i| at[i] + r_wy[i] / y[i] - r.primal[i])
                .collect();
            let dy = normal.solve(&rhs);
            let atdy = a.mul_transpose_vec(&dy);
            let dx: Vec<f64> = (0..n)
                .map(|j| d[j] * (r.dual[j] + r_xz[j] / x[j] - atdy[j]))
                .collect();
            let dw: Vec<f64> = (0..m).map(|i| (r_wy[i] - w[i] * dy[i]) / y[i]).collect();
            let dz: Vec<f64> = (0..n).map(|j| (r_xz[j] - z[j] * dx[j]) / x[j]).collect();
            (dx, dw, dy, dz)
        };

        let mu = (dot(&x, &z) + dot(&w, &y)) / (n + m) as f64;

        // predictor
        let r_xz: Vec<f64> = (0..n).map(|j| -x[j] * z[j]).collect();
        let r_wy: Vec<f64> = (0..m).map(|i| -w[i] * y[i]).collect();
        let (dx_a, dw_a, dy_a, dz_a) = direction(&r_xz, &r_wy);
        let ap = max_step(&x, &dx_a).min(max_step(&w, &dw_a));
        let ad = max_step(&z, &dz_a).min(max_step(&y, &dy_a));
        let mu_aff = ((0..n)
            .map(|j| (x[j] + ap * dx_a[j]) * (z[j] + ad * dz_a[j]))
            .sum::<f64>()
            + (0..m)
                .map(|i| (w[i] + ap * dw_a[i]) * (y[i] + ad * dy_a[i]))
                .sum::<f64>())
            / (n + m) as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let r_xz: Vec<f64> = (0..n)
            .map(|j| sigma * mu - x[j] * z[j] - dx_a[j] * dz_a[j])
            .collect();
        let r_wy: Vec<f64> = (0..m)
            .map(|i| sigma * mu - w[i] * y[i] - dw_a[i] * dy_a[i])
            .collect();
        let (dx, dw, dy, dz) = direction(&r_xz, &r_wy);
        let ap = (s.step_factor * max_step(&x, &dx).min(max_step(&w, &dw))).min(1.0);
        let ad = (s.step_factor * max_step(&z, &dz).min(max_step(&y, &dy))).min(1.0);
        for j in 0..n {
            x[j] += ap * dx[j];
            z[j] += ad * dz[j];
        }
        for i in 0..m {
            w[i] += ap * dw[i];
            y[i] += ad * dy[i];
        }
        if x.iter().chain(&z).chain(&w).chain(&y).any(|v| !(*v > 0.0) || !v.is_finite()) {
            break;
        }
    }
    Err(Error::SolverFailure {
        reason: "interior point did not reach tolerance".into(),
        iterations: s.max_iter,
        primal_residual: last.0,
        dual_residual: last.1,
        gap: last.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CscMatrix;

    fn tiny() -> LpProblem {
        // max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x <= 3
        LpProblem {
            objective: vec![3.0, 2.0],
            constraints: CscMatrix::from_triplets(
                3,
                2,
                &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 0, 1.0)],
            ),
            rhs: vec![4.0, 6.0, 3.0],
            n_times: 1,
            n_nodes: 2,
        }
    }

    #[test]
    fn solves_textbook_problem() {
        let sol = solve(&tiny(), &IpmSettings::default()).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-7);
        assert!((sol.x[1] - 1.0).abs() < 1e-7);
        assert!((sol.primal_value - 11.0).abs() < 1e-7);
        assert!((sol.dual_value - 11.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_limit_reports_residuals() {
        let settings = IpmSettings {
            max_iter: 1,
            ..IpmSettings::default()
        };
        match solve(&tiny(), &settings) {
            Err(Error::SolverFailure { iterations, primal_residual, .. }) => {
                assert_eq!(iterations, 1);
                assert!(primal_residual.is_finite());
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
