//! Discrete variational smoothing of a lattice vector field.
//!
//! Minimises `Σ_valid |ṽ − v|² + λ Σ_nodes (∂u/∂x + ∂v/∂y)²` with central
//! differences in lattice units (one-sided on the lattice boundary). Invalid
//! nodes are first filled by harmonic interpolation from valid neighbours and
//! then carry only a tiny anchor weight toward that fill, which keeps the
//! normal equations positive definite.

use super::{MotionConfig, VelocityField};
use crate::error::{Error, Result};
use crate::linalg::conjugate_gradient;

const INVALID_ANCHOR: f64 = 1e-6;

/// Sparse rows of the discrete divergence operator acting on
/// `[u_0 .. u_{N-1}, v_0 .. v_{N-1}]`.
fn divergence_rows(rows: usize, cols: usize) -> Vec<Vec<(usize, f64)>> {
    let n = rows * cols;
    let idx = |r: usize, c: usize| r * cols + c;
    let mut out = Vec::with_capacity(n);
    for r in 0..rows {
        for c in 0..cols {
            let mut row = Vec::with_capacity(4);
            // ∂u/∂x along columns
            if cols > 1 {
                if c == 0 {
                    row.push((idx(r, 1), 1.0));
                    row.push((idx(r, 0), -1.0));
                } else if c == cols - 1 {
                    row.push((idx(r, c), 1.0));
                    row.push((idx(r, c - 1), -1.0));
                } else {
                    row.push((idx(r, c + 1), 0.5));
                    row.push((idx(r, c - 1), -0.5));
                }
            }
            // ∂v/∂y along rows
            if rows > 1 {
                if r == 0 {
                    row.push((n + idx(1, c), 1.0));
                    row.push((n + idx(0, c), -1.0));
                } else if r == rows - 1 {
                    row.push((n + idx(r, c), 1.0));
                    row.push((n + idx(r - 1, c), -1.0));
                } else {
                    row.push((n + idx(r + 1, c), 0.5));
                    row.push((n + idx(r - 1, c), -0.5));
                }
            }
            out.push(row);
        }
    }
    out
}

fn stack(vectors: &[[f64; 2]]) -> Vec<f64> {
    vectors
        .iter()
        .map(|v| v[0])
        .chain(vectors.iter().map(|v| v[1]))
        .collect()
}

fn unstack(x: &[f64]) -> Vec<[f64; 2]> {
    let n = x.len() / 2;
    (0..n).map(|i| [x[i], x[n + i]]).collect()
}

/// Discrete divergence at every lattice node (lattice units).
pub fn divergence(vectors: &[[f64; 2]], rows: usize, cols: usize) -> Vec<f64> {
    let x = stack(vectors);
    divergence_rows(rows, cols)
        .iter()
        .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
        .collect()
}

/// Sum of squared discrete divergence.
pub fn divergence_penalty(vectors: &[[f64; 2]], rows: usize, cols: usize) -> f64 {
    divergence(vectors, rows, cols).iter().map(|d| d * d).sum()
}

/// Harmonic interpolation of one component over invalid nodes, Dirichlet
/// data from valid nodes and natural boundaries at the lattice edge.
/// Components of invalid nodes with no valid node at all are set to 0.
fn harmonic_fill(values: &[f64], valid: &[bool], rows: usize, cols: usize, cfg: &MotionConfig) -> Vec<f64> {
    let n = rows * cols;
    let neighbours = |i: usize| {
        let (r, c) = (i / cols, i % cols);
        let mut nb = Vec::with_capacity(4);
        if c > 0 {
            nb.push(i - 1);
        }
        if c + 1 < cols {
            nb.push(i + 1);
        }
        if r > 0 {
            nb.push(i - cols);
        }
        if r + 1 < rows {
            nb.push(i + cols);
        }
        nb
    };

    // Invalid nodes reachable from a valid node through invalid ones.
    let mut reachable = vec![false; n];
    let mut queue: std::collections::VecDeque<usize> = (0..n).filter(|&i| valid[i]).collect();
    while let Some(i) = queue.pop_front() {
        for j in neighbours(i) {
            if !valid[j] && !reachable[j] {
                reachable[j] = true;
                queue.push_back(j);
            }
        }
    }
    let unknowns: Vec<usize> = (0..n).filter(|&i| reachable[i]).collect();
    let mut out: Vec<f64> = (0..n).map(|i| if valid[i] { values[i] } else { 0.0 }).collect();
    if unknowns.is_empty() {
        return out;
    }
    let mut slot = vec![usize::MAX; n];
    for (k, &i) in unknowns.iter().enumerate() {
        slot[i] = k;
    }
    let nbs: Vec<Vec<usize>> = unknowns.iter().map(|&i| neighbours(i)).collect();
    let degree: Vec<f64> = nbs.iter().map(|nb| nb.len() as f64).collect();
    let rhs: Vec<f64> = nbs
        .iter()
        .map(|nb| nb.iter().filter(|&&j| valid[j]).map(|&j| values[j]).sum())
        .collect();
    let valid_count = valid.iter().filter(|&&v| v).count();
    let mean = (0..n).filter(|&i| valid[i]).map(|i| values[i]).sum::<f64>() / valid_count as f64;
    let apply = |x: &[f64], y: &mut [f64]| {
        for (k, nb) in nbs.iter().enumerate() {
            let mut s = degree[k] * x[k];
            for &j in nb {
                if slot[j] != usize::MAX {
                    s -= x[slot[j]];
                }
            }
            y[k] = s;
        }
    };
    let sol = conjugate_gradient(
        apply,
        &rhs,
        &degree,
        vec![mean; unknowns.len()],
        cfg.tolerance,
        cfg.max_iterations,
    );
    for (k, &i) in unknowns.iter().enumerate() {
        out[i] = sol.x[k];
    }
    out
}

/// Smooth the raw TREC vectors under the squared-divergence penalty.
pub fn smooth_velocity(raw: &VelocityField, cfg: &MotionConfig) -> Result<VelocityField> {
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    cfg.validate()?;
    let (rows, cols) = (raw.rows, raw.cols);
    let n = rows * cols;
    if raw.len() != n {
        return Err(Error::DimensionMismatch(
            "velocity field does not match its lattice".into(),
        ));
    }

    let mut out = raw.clone();
    if !raw.valid.iter().any(|&v| v) {
        out.smooth = vec![[0.0, 0.0]; n];
        return Ok(out);
    }
    let u: Vec<f64> = raw.raw.iter().map(|v| v[0]).collect();
    let v: Vec<f64> = raw.raw.iter().map(|v| v[1]).collect();
    let fu = harmonic_fill(&u, &raw.valid, rows, cols, cfg);
    let fv = harmonic_fill(&v, &raw.valid, rows, cols, cfg);
    let filled: Vec<[f64; 2]> = fu.iter().zip(&fv).map(|(&a, &b)| [a, b]).collect();

    let weights: Vec<f64> = raw
        .valid
        .iter()
        .map(|&ok| if ok { 1.0 } else { INVALID_ANCHOR })
        .chain(raw.valid.iter().map(|&ok| if ok { 1.0 } else { INVALID_ANCHOR }))
        .collect();
    let div = divergence_rows(rows, cols);
    let mut diag = weights.clone();
    for row in &div {
        for &(j, a) in row {
            diag[j] += cfg.lambda * a * a;
        }
    }
    let target = stack(&filled);
    let b: Vec<f64> = target.iter().zip(&weights).map(|(t, w)| t * w).collect();
    let lambda = cfg.lambda;
    let apply = |x: &[f64], y: &mut [f64]| {
        for (k, yk) in y.iter_mut().enumerate() {
            *yk = weights[k] * x[k];
        }
        if lambda > 0.0 {
            for row in &div {
                let d: f64 = row.iter().map(|&(j, a)| a * x[j]).sum();
                for &(j, a) in row {
                    y[j] += lambda * a * d;
                }
            }
        }
    };
    let sol = conjugate_gradient(apply, &b, &diag, target.clone(), cfg.tolerance, cfg.max_iterations);
    out.smooth = unstack(&sol.x);
    Ok(out)
}
