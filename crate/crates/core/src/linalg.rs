//! Small dense/banded/sparse kernels used by the transition operator and the
//! interior-point solver.

use crate::error::{Error, Result};

/// Solves a tridiagonal system by the Thomas algorithm.
///
/// `sub[j]` multiplies `x[j-1]`, `sup[j]` multiplies `x[j+1]`; `sub[0]` and
/// `sup[n-1]` are ignored. Stable without pivoting when the matrix is row or
/// column diagonally dominant.
pub fn solve_tridiagonal(sub: &[f64], main: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = main.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "tridiagonal system of size {n} with diagonals {}/{} and rhs {}",
            sub.len(),
            sup.len(),
            rhs.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = main[0];
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Numerical("zero pivot in tridiagonal solve".into()));
    }
    c[0] = if n > 1 { sup[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for j in 1..n {
        denom = main[j] - sub[j] * c[j - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Numerical(format!(
                "zero pivot at row {j} in tridiagonal solve"
            )));
        }
        c[j] = if j + 1 < n { sup[j] / denom } else { 0.0 };
        d[j] = (rhs[j] - sub[j] * d[j - 1]) / denom;
    }
    let mut x = d;
    for j in (0..n - 1).rev() {
        x[j] -= c[j] * x[j + 1];
    }
    Ok(x)
}

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; n_cols + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
            last = Some((r, c));
        }
        for c in 0..n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut m = CscMatrix {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut col_ptr = vec![0usize; self.n_cols + 1];
        let mut row_idx = Vec::with_capacity(self.row_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.n_cols {
            for (r, v) in self.column(c) {
                if v != 0.0 {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr[c + 1] = row_idx.len();
        }
        self.col_ptr = col_ptr;
        self.row_idx = row_idx;
        self.values = values;
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        for (c, &xc) in x.iter().enumerate().take(self.n_cols) {
            if xc == 0.0 {
                continue;
            }
            for (r, v) in self.column(c) {
                y[r] += v * xc;
            }
        }
        y
    }

    /// `y = A^T x`.
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_cols)
            .map(|c| self.column(c).map(|(r, v)| v * x[r]).sum())
            .collect()
    }

    /// Half bandwidth of `A diag(d) A^T` for any positive `d`.
    pub fn normal_bandwidth(&self) -> usize {
        let mut bw = 0;
        for c in 0..self.n_cols {
            let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
            if let (Some(lo), Some(hi)) = (rows.iter().min(), rows.iter().max()) {
                bw = bw.max(hi - lo);
            }
        }
        bw
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols]; self.n_rows];
        for c in 0..self.n_cols {
            for (r, v) in self.column(c) {
                dense[r][c] = v;
            }
        }
        dense
    }
}

/// Symmetric positive definite matrix in lower band storage, factorized in
/// place as `L L^T`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // data[i * (bw + 1) + d] holds entry (i, i - d)
    data: Vec<f64>,
}

/// Pivot substituted for numerically singular rows; removes the row from
/// the solve instead of failing.
const HUGE_PIVOT: f64 = 1e64;

impl BandedCholesky {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Assembles `A diag(d) A^T + diag(e)`.
    pub fn assemble_normal(&mut self, a: &CscMatrix, d: &[f64], e: &[f64]) {
        self.reset();
        for (c, &dc) in d.iter().enumerate().take(a.n_cols) {
            let range = a.col_ptr[c]..a.col_ptr[c + 1];
            let rows = &a.row_idx[range.clone()];
            let vals = &a.values[range];
            for p in 0..rows.len() {
                for q in 0..=p {
                    let v = dc * vals[p] * vals[q];
                    self.add(rows[p], rows[q], v);
                }
            }
        }
        for (i, &ei) in e.iter().enumerate() {
            self.add(i, i, ei);
        }
    }

    /// In-place factorization. Returns the number of pivots replaced because
    /// they were numerically zero.
    pub fn factorize(&mut self) -> usize {
        let n = self.n;
        let bw = self.bw;
        let mut replaced = 0;
        let mut max_diag: f64 = 0.0;
        for i in 0..n {
            max_diag = max_diag.max(self.data[self.idx(i, i)].abs());
        }
        let tiny = 1e-30 * max_diag.max(1e-300);
        for i in 0..n {
            let jmin = i.saturating_sub(bw);
            for j in jmin..=i {
                let mut s = self.data[self.idx(i, j)];
                for k in jmin..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    let piv = if s > tiny && s.is_finite() {
                        s.sqrt()
                    } else {
                        replaced += 1;
                        HUGE_PIVOT
                    };
                    let k = self.idx(i, i);
                    self.data[k] = piv;
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = s / self.data[self.idx(j, j)];
                }
            }
        }
        replaced
    }

    /// Solves `L L^T x = rhs` after [`factorize`](Self::factorize).
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let bw = self.bw;
        let mut z = rhs.to_vec();
        for i in 0..n {
            let jmin = i.saturating_sub(bw);
            let mut s = z[i];
            for (j, zj) in z.iter().enumerate().take(i).skip(jmin) {
                s -= self.data[self.idx(i, j)] * zj;
            }
            z[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let jmax = (i + bw).min(n - 1);
            let mut s = z[i];
            for (j, zj) in z.iter().enumerate().take(jmax + 1).skip(i + 1) {
                s -= self.data[self.idx(j, i)] * zj;
            }
            z[i] = s / self.data[self.idx(i, i)];
        }
        z
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
