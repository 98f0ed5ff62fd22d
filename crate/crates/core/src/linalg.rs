//! Dense LU with partial pivoting and a 1-norm condition check.

use crate::error::{Error, Result};

/// Condition number above which a solve is refused.
pub const MAX_CONDITION: f64 = 1e8;

pub type Matrix = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Matrix {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for (k, aik) in a[i].iter().enumerate() {
            if *aik == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn mat_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Matrix,
    perm: Vec<usize>,
    condition: f64,
}

impl Lu {
    /// Factors `a`; fails with `SingularSolve` when a pivot vanishes or the
    /// 1-norm condition number exceeds [`MAX_CONDITION`].
    pub fn factor(mut a: Matrix) -> Result<Lu> {
        let n = a.len();
        let norm_a = one_norm(&a);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, a[i][k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= f64::MIN_POSITIVE * norm_a.max(1.0) * 16.0 || pivot == 0.0 {
                return Err(Error::SingularSolve { condition: f64::INFINITY });
            }
            a.swap(k, p);
            perm.swap(k, p);
            let (upper, lower) = a.split_at_mut(k + 1);
            let pivot_row = &upper[k];
            for row in lower.iter_mut() {
                let factor = row[k] / pivot_row[k];
                if factor == 0.0 {
                    continue;
                }
                row[k] = factor;
                for j in k + 1..n {
                    row[j] -= factor * pivot_row[j];
                }
            }
        }
        let mut lu = Lu { n, lu: a, perm, condition: 0.0 };
        let inv_norm = lu.inverse_one_norm();
        lu.condition = norm_a * inv_norm;
        if !lu.condition.is_finite() || lu.condition > MAX_CONDITION {
            return Err(Error::SingularSolve { condition: lu.condition });
        }
        Ok(lu)
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i][j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i][j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i][i];
        }
        x
    }

    /// Solves `X A = B` row by row, i.e. `A^T x = b` for each row of `B`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // A = P^T L U, so A^T y = b  <=>  U^T L^T P y = b.
        let mut z = b.to_vec();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[j][i] * z[j]).sum();
            z[i] = (z[i] - s) / self.lu[i][i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[j][i] * z[j]).sum();
            z[i] -= s;
        }
        let mut y = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            y[p] = z[k];
        }
        y
    }

    fn inverse_one_norm(&self) -> f64 {
        let mut best: f64 = 0.0;
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            best = best.max(col.iter().map(|v| v.abs()).sum());
        }
        best
    }
}

fn one_norm(a: &Matrix) -> f64 {
    let n = a.len();
    (0..a.first().map_or(0, Vec::len))
        .map(|j| (0..n).map(|i| a[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `a x = b`.
pub fn solve(a: Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(Lu::factor(a)?.solve(b))
}
