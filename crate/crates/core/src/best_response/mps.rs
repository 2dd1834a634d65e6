//! Free-format MPS export of best-response LPs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::lp::LpProblem;

fn col_name(p: &LpProblem, k: usize) -> String {
    let (i, j) = p.var_position(k);
    format!("X_{i}_{j}")
}

fn row_name(r: usize) -> String {
    format!("R{r}")
}

pub fn to_mps(p: &LpProblem, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NAME {name}");
    out.push_str("OBJSENSE\n    MAX\n");
    out.push_str("ROWS\n N OBJ\n");
    for r in 0..p.n_constraints() {
        let _ = writeln!(out, " L {}", row_name(r));
    }
    out.push_str("COLUMNS\n");
    for k in 0..p.n_vars() {
        let col = col_name(p, k);
        if p.objective[k] != 0.0 {
            let _ = writeln!(out, "    {col} OBJ {:e}", p.objective[k]);
        }
        for (r, v) in p.constraints.column(k) {
            let _ = writeln!(out, "    {col} {} {:e}", row_name(r), v);
        }
    }
    out.push_str("RHS\n");
    for (r, &b) in p.rhs.iter().enumerate() {
        if b != 0.0 {
            let _ = writeln!(out, "    RHS {} {:e}", row_name(r), b);
        }
    }
    out.push_str("ENDATA\n");
    out
}

pub fn write_mps(p: &LpProblem, name: &str, path: &Path) -> Result<()> {
    std::fs::write(path, to_mps(p, name)).map_err(|e| Error::io(path, e))
}
