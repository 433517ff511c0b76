use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{SkylineCholesky, SparseSym};
use crate::raster::{Point, TrackState};

/// Neighbour weight as a function of the current distance between arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightFn {
    /// `φ = 1` for every neighbour.
    #[default]
    Binary,
    /// `φ = 1 / ‖a − b‖`.
    InverseDistance,
}

impl WeightFn {
    pub fn weight(self, a: Point, b: Point) -> f64 {
        match self {
            WeightFn::Binary => 1.0,
            WeightFn::InverseDistance => 1.0 / (a[0] - b[0]).hypot(a[1] - b[1]).max(1e-12),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightFn::Binary => "binary",
            WeightFn::InverseDistance => "inverse_distance",
        }
    }

    pub fn parse(s: &str) -> Option<WeightFn> {
        match s {
            "binary" => Some(WeightFn::Binary),
            "inverse_distance" => Some(WeightFn::InverseDistance),
            _ => None,
        }
    }
}

/// Spatial association and scale of one CAR field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarParams {
    pub rho: f64,
    pub sigma: f64,
}

/// Neighbourhood weights of the arrays at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CarStructure {
    pub d: f64,
    pub weight_fn: WeightFn,
    /// Neighbour sets, fixed from the initial positions.
    pub neighbours: Vec<Vec<usize>>,
    /// `W_t` with zero diagonal.
    pub w: SparseSym,
    /// Row sums `w_{i+}`, the diagonal of `W_D`.
    pub row_sums: Vec<f64>,
}

/// All `j ≠ i` with `‖p_i − p_j‖ < d`, sorted. Buckets points on a `d`-sized
/// grid so only adjacent buckets are compared.
pub fn neighbour_sets(points: &[Point], d: f64) -> Result<Vec<Vec<usize>>> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::InvalidInput(format!(
            "neighbourhood distance must be positive, got {d}"
        )));
    }
    let key = |p: Point| ((p[0] / d).floor() as i64, (p[1] / d).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let d2 = d * d;
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let (bx, by) = key(p);
            let mut out = Vec::new();
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(b) = buckets.get(&(bx + dx, by + dy)) {
                        for &j in b {
                            let q = points[j];
                            if j != i && (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) < d2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect())
}

impl CarStructure {
    /// Weights among `positions` over fixed neighbour sets.
    pub fn from_neighbours(
        neighbours: Vec<Vec<usize>>,
        positions: &[Point],
        d: f64,
        weight_fn: WeightFn,
    ) -> Result<Self> {
        if neighbours.len() != positions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} neighbour sets for {} arrays",
                neighbours.len(),
                positions.len()
            )));
        }
        let rows: Vec<Vec<(usize, f64)>> = neighbours
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                nb.iter()
                    .map(|&j| (j, weight_fn.weight(positions[i], positions[j])))
                    .collect()
            })
            .collect();
        let row_sums: Vec<f64> = rows.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
        if let Some(i) = row_sums.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::IsolatedArray(i));
        }
        Ok(CarStructure {
            d,
            weight_fn,
            neighbours,
            w: SparseSym::from_rows(rows),
            row_sums,
        })
    }

    pub fn len(&self) -> usize {
        self.row_sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_sums.is_empty()
    }

    /// Precision kernel `W_D − ρ W`.
    pub fn precision(&self, rho: f64) -> SparseSym {
        let rows = (0..self.len())
            .map(|i| {
                let mut r: Vec<(usize, f64)> = self.w.row(i).iter().map(|&(j, w)| (j, -rho * w)).collect();
                r.push((i, self.row_sums[i]));
                r
            })
            .collect();
        SparseSym::from_rows(rows)
    }

    /// Factor `W_D − ρ W`; fails when `ρ` lies outside the admissible range.
    pub fn factor(&self, rho: f64) -> Result<SkylineCholesky> {
        SkylineCholesky::factor(&self.precision(rho))
    }

    /// `B v = v − ρ W_D⁻¹ W v`.
    pub fn apply_b(&self, rho: f64, v: &[f64]) -> Vec<f64> {
        let wv = self.w.mul_vec(v);
        v.iter()
            .zip(&wv)
            .zip(&self.row_sums)
            .map(|((&x, &y), &s)| x - rho * y / s)
            .collect()
    }

    /// `B⁻¹ u = (W_D − ρ W)⁻¹ W_D u` using an existing factor of `W_D − ρ W`.
    pub fn solve_b(&self, chol: &SkylineCholesky, u: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = u.iter().zip(&self.row_sums).map(|(a, s)| a * s).collect();
        chol.solve(&scaled)
    }
}

/// Weights at time `t` (1-based) with neighbour sets from the initial
/// positions of the track.
pub fn build_weights(track: &TrackState, t: usize, d: f64, weight_fn: WeightFn) -> Result<CarStructure> {
    if t == 0 || t > track.times() {
        return Err(Error::InvalidInput(format!(
            "time {t} outside the track (1..={})",
            track.times()
        )));
    }
    let nb = neighbour_sets(track.initial(), d)?;
    CarStructure::from_neighbours(nb, track.at(t), d, weight_fn)
}

/// Extreme eigenvalues of `D^{-1/2} W D^{-1/2}` (same spectrum as `W_D⁻¹ W`).
fn extreme_eigenvalues(s: &CarStructure) -> (f64, f64) {
    let n = s.len();
    let scale: Vec<f64> = s.row_sums.iter().map(|x| 1.0 / x.sqrt()).collect();
    if n <= 500 {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for &(j, w) in s.w.row(i) {
                m[(i, j)] = w * scale[i] * scale[j];
            }
        }
        let eig = SymmetricEigen::new(m).eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return (lo, hi);
    }
    // Lanczos with full reorthogonalisation; the extreme Ritz values
    // converge long before the Krylov space fills.
    let apply = |x: &[f64]| -> Vec<f64> {
        let y: Vec<f64> = x.iter().zip(&scale).map(|(a, b)| a * b).collect();
        s.w.mul_vec(&y).iter().zip(&scale).map(|(a, b)| a * b).collect()
    };
    let steps = n.min(240);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let start: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64) * 0.754_877_666).fract())
        .collect();
    let nrm = start.iter().map(|v| v * v).sum::<f64>().sqrt();
    basis.push(start.into_iter().map(|v| v / nrm).collect());
    for k in 0..steps {
        let mut w = apply(&basis[k]);
        let a: f64 = w.iter().zip(&basis[k]).map(|(x, y)| x * y).sum();
        alpha.push(a);
        for _ in 0..2 {
            for v in &basis {
                let c: f64 = w.iter().zip(v).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if k + 1 == steps || b < 1e-12 {
            break;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|v| v / b).collect());
    }
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t).eigenvalues;
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Admissible interval for `ρ`: `(1/λ_min, 1/λ_max)` of `W_D⁻¹ W`.
pub fn rho_bounds(s: &CarStructure) -> (f64, f64) {
    let (lo, hi) = extreme_eigenvalues(s);
    (1.0 / lo, 1.0 / hi)
}

/// Dense covariance `σ² (W_D − ρ W)⁻¹`.
pub fn car_covariance(s: &CarStructure, params: CarParams) -> Result<DMatrix<f64>> {
    if !(params.sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "sigma must be non-negative, got {}",
            params.sigma
        )));
    }
    let chol = s.factor(params.rho)?;
    let n = s.len();
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let s2 = params.sigma * params.sigma;
    for j in 0..n {
        e[j] = 1.0;
        let col = chol.solve(&e);
        e[j] = 0.0;
        for i in 0..n {
            out[(i, j)] = s2 * col[i];
        }
    }
    Ok((&out + out.transpose()) * 0.5)
}

/// Rook-style lattice of points with the given spacing, row by row.
pub fn lattice_points(rows: usize, cols: usize, spacing: f64) -> Vec<Point> {
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| [c as f64 * spacing, r as f64 * spacing]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rook(rows: usize, cols: usize) -> CarStructure {
        let pts = lattice_points(rows, cols, 2.5);
        let nb = neighbour_sets(&pts, 3.0).unwrap();
        CarStructure::from_neighbours(nb, &pts, 3.0, WeightFn::Binary).unwrap()
    }

    #[test]
    fn rook_row_sums() {
        let s = rook(3, 3);
        assert_eq!(s.row_sums, vec![2.0, 3.0, 2.0, 3.0, 4.0, 3.0, 2.0, 3.0, 2.0]);
        let dense = s.w.to_dense();
        assert_eq!(dense, dense.transpose());
        for i in 0..9 {
            assert_eq!(dense[(i, i)], 0.0);
        }
    }

    #[test]
    fn neighbour_sets_match_brute_force() {
        let pts: Vec<Point> = (0..60)
            .map(|i| [((i * 37) % 23) as f64 * 0.7, ((i * 11) % 17) as f64 * 0.9])
            .collect();
        let nb = neighbour_sets(&pts, 2.1).unwrap();
        for i in 0..pts.len() {
            let expect: Vec<usize> = (0..pts.len())
                .filter(|&j| j != i && (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]) < 2.1)
                .collect();
            assert_eq!(nb[i], expect);
        }
    }

    #[test]
    fn small_d_isolates_arrays() {
        let pts = lattice_points(3, 3, 2.5);
        let nb = neighbour_sets(&pts, 2.0).unwrap();
        assert!(matches!(
            CarStructure::from_neighbours(nb, &pts, 2.0, WeightFn::Binary),
            Err(Error::IsolatedArray(0))
        ));
    }

    #[test]
    fn rigid_translation_keeps_weights() {
        let pts = lattice_points(4, 4, 2.5);
        let moved: Vec<Point> = pts.iter().map(|p| [p[0] + 3.3, p[1] - 1.1]).collect();
        let track = TrackState::from_positions(vec![pts, moved]).unwrap();
        for wf in [WeightFn::Binary, WeightFn::InverseDistance] {
            let a = build_weights(&track, 1, 3.0, wf).unwrap();
            let b = build_weights(&track, 2, 3.0, wf).unwrap();
            assert!((a.w.to_dense() - b.w.to_dense()).abs().max() < 1e-12);
            let (ra, rb) = (rho_bounds(&a), rho_bounds(&b));
            assert!((ra.0 - rb.0).abs() < 1e-12 && (ra.1 - rb.1).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_bounds_and_covariance() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0]];
        let nb = neighbour_sets(&pts, 1.5).unwrap();
        let s = CarStructure::from_neighbours(nb, &pts, 1.5, WeightFn::Binary).unwrap();
        let (lo, hi) = rho_bounds(&s);
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        // [[1, -.5], [-.5, 1]]⁻¹ = [[1, .5], [.5, 1]] / 0.75
        let cov = car_covariance(&s, CarParams { rho: 0.5, sigma: 1.0 }).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]) / 0.75;
        assert!((cov - expect).abs().max() < 1e-12);
    }

    #[test]
    fn rho_zero_gives_diagonal_covariance() {
        let s = rook(3, 4);
        let cov = car_covariance(&s, CarParams { rho: 0.0, sigma: 2.0 }).unwrap();
        for i in 0..s.len() {
            for j in 0..s.len() {
                let expect = if i == j { 4.0 / s.row_sums[i] } else { 0.0 };
                assert!((cov[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn definiteness_switches_at_bounds() {
        let s = rook(5, 5);
        let (lo, hi) = rho_bounds(&s);
        assert!(lo < 0.0 && hi > 0.0);
        assert!((hi - 1.0).abs() < 1e-10);
        for b in [lo, hi] {
            assert!(s.factor(0.99 * b).is_ok());
            assert!(matches!(s.factor(1.01 * b), Err(Error::NotPositiveDefinite { .. })));
        }
    }

    #[test]
    fn power_iteration_agrees_with_dense_eigen() {
        // 26×26 = 676 nodes goes through the iterative path.
        let pts: Vec<Point> = lattice_points(26, 26, 1.0)
            .into_iter()
            .map(|p| [p[0] + 0.05 * (p[1] * 1.3).sin(), p[1] + 0.05 * (p[0] * 0.7).cos()])
            .collect();
        let nb = neighbour_sets(&pts, 1.5).unwrap();
        let s = CarStructure::from_neighbours(nb, &pts, 1.5, WeightFn::InverseDistance).unwrap();
        let (lo, hi) = rho_bounds(&s);
        let scale: Vec<f64> = s.row_sums.iter().map(|x| 1.0 / x.sqrt()).collect();
        let mut m = s.w.to_dense();
        for i in 0..s.len() {
            for j in 0..s.len() {
                m[(i, j)] *= scale[i] * scale[j];
            }
        }
        let eig = SymmetricEigen::new(m).eigenvalues;
        let emin = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let emax = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((1.0 / emax - hi).abs() < 1e-9);
        assert!((1.0 / emin - lo).abs() < 1e-8, "{} vs {}", 1.0 / emin, lo);
    }

    #[test]
    fn apply_and_solve_b_are_inverse() {
        let s = rook(4, 5);
        let v: Vec<f64> = (0..s.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let chol = s.factor(0.6).unwrap();
        let back = s.solve_b(&chol, &s.apply_b(0.6, &v));
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_matches_dense_inverse() {
        let s = rook(6, 6);
        let p = CarParams { rho: -0.7, sigma: 1.3 };
        let cov = car_covariance(&s, p).unwrap();
        let dense = s.precision(p.rho).to_dense().try_inverse().unwrap() * (p.sigma * p.sigma);
        assert!((cov - dense).abs().max() < 1e-10);
    }
}
