//! Sparse symmetric matrices, an envelope (skyline) Cholesky factorization
//! and a preconditioned conjugate-gradient solver.
//!
//! The CAR precision matrices built over an array lattice are banded when
//! arrays are numbered row by row, so a skyline factorization stores and
//! touches only the band. Log-determinants, solves and Gaussian sampling
//! all go through [`SkylineCholesky`].

use crate::error::{Error, Result};

/// Symmetric sparse matrix stored as full adjacency rows (both triangles).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    /// Build from per-row `(column, value)` entries. Both triangles must be
    /// present; entries within a row need not be sorted.
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
        }
        SparseSym { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(x)
            .map(|(row, &xi)| xi * row.iter().map(|&(j, a)| a * x[j]).sum::<f64>())
            .sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                m[(i, j)] += a;
            }
        }
        m
    }
}

/// Cholesky factor `A = L Lᵀ` held in envelope storage.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    /// First stored column of each row.
    first: Vec<usize>,
    /// Offset of each row's first stored entry in `values`.
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &SparseSym) -> Result<Self> {
        let n = a.dim();
        let mut first = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n + 1);
        let mut len = 0;
        for i in 0..n {
            let f = a.row(i).iter().map(|&(j, _)| j).filter(|&j| j <= i).min().unwrap_or(i);
            first.push(f);
            offset.push(len);
            len += i - f + 1;
        }
        offset.push(len);
        let mut values = vec![0.0; len];
        for i in 0..n {
            for &(j, v) in a.row(i) {
                if j <= i {
                    values[offset[i] + j - first[i]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let oi = offset[i];
            for j in fi..=i {
                let fj = first[j];
                let oj = offset[j];
                let start = fi.max(fj);
                let mut sum = values[oi + j - fi];
                for k in start..j {
                    sum -= values[oi + k - fi] * values[oj + k - fj];
                }
                if j < i {
                    values[oi + j - fi] = sum / values[oj + j - fj];
                } else {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: sum });
                    }
                    values[oi + i - fi] = sum.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { first, offset, values })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.values[self.offset[i] + j - self.first[i]]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l(i, i).ln()).sum::<f64>()
    }

    /// Solve `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for i in 0..self.dim() {
            let fi = self.first[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.l(i, k) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        y
    }

    /// Solve `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        for i in (0..self.dim()).rev() {
            x[i] /= self.l(i, i);
            let xi = x[i];
            for k in self.first[i]..i {
                x[k] -= self.l(i, k) * xi;
            }
        }
        x
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Compute `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (self.first[i]..=i).map(|k| self.l(i, k) * z[k]).sum())
            .collect()
    }

    /// Diagonal of `A⁻¹`, one column solve per entry.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.dim();
        let mut e = vec![0.0; n];
        (0..n)
            .map(|i| {
                e[i] = 1.0;
                let x = self.solve(&e);
                e[i] = 0.0;
                x[i]
            })
            .collect()
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator.
///
/// Stops when `‖b − A x‖ ≤ tol · ‖b‖`.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], diag: &[f64], x0: Vec<f64>, tol: f64, max_iter: usize) -> CgSolution
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut x = x0;
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let b_norm = norm(b).max(f64::MIN_POSITIVE);
    let mut res = norm(&r) / b_norm;
    if res <= tol {
        return CgSolution {
            x,
            iterations: 0,
            converged: true,
            relative_residual: res,
        };
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .zip(diag)
            .map(|(ri, &d)| if d > 0.0 { ri / d } else { *ri })
            .collect()
    };
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgSolution {
                x,
                iterations: it,
                converged: false,
                relative_residual: res,
            };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r) / b_norm;
        if res <= tol {
            return CgSolution {
                x,
                iterations: it,
                converged: true,
                relative_residual: res,
            };
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgSolution {
        x,
        iterations: max_iter,
        converged: false,
        relative_residual: res,
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
