use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::advect::GrowthField;
use crate::error::{Error, Result};
use crate::raster::Point;

/// Mixture of locally linear regressions with Gaussian kernel weights.
///
/// Kernel `j` contributes the columns `π_j(x) · (1, (x − c_j)/b, (y − c_j)/b)`;
/// centring and scaling the coordinates leaves the column space of
/// `(1, x, y)` unchanged and keeps the design well conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMeanModel {
    pub centers: Vec<Point>,
    pub bandwidth: f64,
}

impl KernelMeanModel {
    pub fn new(centers: Vec<Point>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidInput("at least one kernel is required".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelMeanModel { centers, bandwidth })
    }

    pub fn kernels(&self) -> usize {
        self.centers.len()
    }

    /// Number of regression coefficients, three per kernel.
    pub fn dim(&self) -> usize {
        3 * self.kernels()
    }

    /// `π_j(p) = exp(−‖p − c_j‖² / 2b²)`.
    pub fn weight(&self, j: usize, p: Point) -> f64 {
        let c = self.centers[j];
        let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Design matrix with one row per position and `3J` columns.
    pub fn design(&self, positions: &[Point]) -> DMatrix<f64> {
        let b = self.bandwidth;
        let mut f = DMatrix::zeros(positions.len(), self.dim());
        for (i, &p) in positions.iter().enumerate() {
            for (j, c) in self.centers.iter().enumerate() {
                let w = self.weight(j, p);
                f[(i, 3 * j)] = w;
                f[(i, 3 * j + 1)] = w * (p[0] - c[0]) / b;
                f[(i, 3 * j + 2)] = w * (p[1] - c[1]) / b;
            }
        }
        f
    }

    /// Mean `F γ` at the given positions.
    pub fn mean(&self, positions: &[Point], gamma: &[f64]) -> Result<Vec<f64>> {
        if gamma.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} kernels",
                gamma.len(),
                self.kernels()
            )));
        }
        let f = self.design(positions);
        Ok((0..positions.len())
            .map(|i| (0..gamma.len()).map(|k| f[(i, k)] * gamma[k]).sum())
            .collect())
    }
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Draw an index with probability proportional to `w`; `None` if all zero.
fn draw(rng: &mut ChaCha8Rng, w: &[f64]) -> Option<usize> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return Some(i);
        }
        u -= x;
    }
    w.iter().rposition(|&x| x > 0.0)
}

/// Weighted K-means: k-means++ seeding followed by Lloyd iterations.
pub fn weighted_kmeans(points: &[Point], weights: &[f64], k: usize, seed: u64, max_iter: usize) -> Result<Vec<Point>> {
    if k == 0 {
        return Err(Error::InvalidInput("K-means needs k >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch("one weight per point required".into()));
    }
    let mut w: Vec<f64> = weights
        .iter()
        .map(|&x| if x.is_finite() { x.max(0.0) } else { 0.0 })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w.iter_mut().for_each(|x| *x = 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; points.len()];
    let first = draw(&mut rng, &w).expect("weights are positive");
    chosen[first] = true;
    let mut centers = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, points[first])).collect();
    while centers.len() < k {
        let score: Vec<f64> = d2.iter().zip(&w).map(|(a, b)| a * b).collect();
        let next = draw(&mut rng, &score)
            .or_else(|| draw(&mut rng, &d2))
            .or_else(|| chosen.iter().position(|&c| !c))
            .expect("k <= number of points");
        chosen[next] = true;
        centers.push(points[next]);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, points[next]));
        }
    }

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, centers[a]).total_cmp(&dist2(p, centers[b])))
                .expect("k >= 1");
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut acc = vec![[0.0f64; 3]; k];
        for (i, &p) in points.iter().enumerate() {
            let a = &mut acc[assign[i]];
            a[0] += w[i] * p[0];
            a[1] += w[i] * p[1];
            a[2] += w[i];
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            // Empty or weightless clusters keep their previous centre.
            if a[2] > 0.0 {
                *c = [a[0] / a[2], a[1] / a[2]];
            }
        }
    }
    Ok(centers)
}

/// Place `J` kernels at the |G|-weighted K-means centres of the valid arrays.
pub fn place_kernels(
    growth: &GrowthField,
    positions: &[Point],
    j: usize,
    bandwidth: f64,
    seed: u64,
) -> Result<KernelMeanModel> {
    if j < 1 {
        return Err(Error::InvalidInput("kernel count J must be at least 1".into()));
    }
    if growth.len() != positions.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} growth values for {} positions",
            growth.len(),
            positions.len()
        )));
    }
    let (pts, w): (Vec<Point>, Vec<f64>) = positions
        .iter()
        .zip(growth.values.iter().zip(&growth.valid))
        .filter(|(_, (_, &ok))| ok)
        .map(|(&p, (&g, _))| (p, g.abs()))
        .unzip();
    if pts.len() < j {
        return Err(Error::InvalidInput(format!(
            "{} valid arrays cannot hold {j} kernels",
            pts.len()
        )));
    }
    KernelMeanModel::new(weighted_kmeans(&pts, &w, j, seed, 100)?, bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_weight_peak_and_tail() {
        let m = KernelMeanModel::new(vec![[3.0, -2.0]], 10.0).unwrap();
        assert_eq!(m.weight(0, [3.0, -2.0]), 1.0);
        let far = m.weight(0, [33.0, -2.0]);
        assert!(far < 0.012);
        assert!((far - (-4.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn single_kernel_spans_plain_linear_design() {
        let m = KernelMeanModel::new(vec![[0.0, 0.0]], 1e6).unwrap();
        let pts = [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let f = m.design(&pts);
        for (i, p) in pts.iter().enumerate() {
            let w = m.weight(0, *p);
            assert!(w > 0.0);
            assert!((f[(i, 0)] - w).abs() < 1e-15);
            assert!((f[(i, 1)] * 1e6 / w - p[0]).abs() < 1e-9);
            assert!((f[(i, 2)] * 1e6 / w - p[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn two_clusters_found() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let a = i as f64 * 0.628;
            pts.push([a.cos(), a.sin()]);
            pts.push([40.0 + 0.5 * a.cos(), 30.0 + 0.5 * a.sin()]);
        }
        let w = vec![1.0; pts.len()];
        // Brute-force oracle: the centroids of the two generated groups.
        let mean = |k: usize| {
            let g: Vec<Point> = pts.iter().skip(k).step_by(2).cloned().collect();
            let n = g.len() as f64;
            [
                g.iter().map(|p| p[0]).sum::<f64>() / n,
                g.iter().map(|p| p[1]).sum::<f64>() / n,
            ]
        };
        let expect = [mean(0), mean(1)];
        let got = weighted_kmeans(&pts, &w, 2, 5, 100).unwrap();
        for e in expect {
            let best = got.iter().map(|c| dist2(*c, e).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "{best}");
        }
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let pts: Vec<Point> = (0..50).map(|i| [(i * 7 % 13) as f64, (i * 5 % 11) as f64]).collect();
        let w: Vec<f64> = (0..50).map(|i| (i % 4) as f64).collect();
        assert_eq!(
            weighted_kmeans(&pts, &w, 6, 9, 50).unwrap(),
            weighted_kmeans(&pts, &w, 6, 9, 50).unwrap()
        );
    }

    #[test]
    fn place_kernels_checks_counts() {
        let g = GrowthField {
            t: 2,
            values: vec![1.0, 2.0, 3.0],
            valid: vec![true, false, true],
        };
        let pos = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert!(place_kernels(&g, &pos, 3, 10.0, 0).is_err());
        assert!(place_kernels(&g, &pos, 0, 10.0, 0).is_err());
        let m = place_kernels(&g, &pos, 2, 10.0, 0).unwrap();
        assert_eq!(m.design(&pos).ncols(), 6);
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let pts = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let c = weighted_kmeans(&pts, &[0.0; 3], 3, 1, 10).unwrap();
        let mut c = c;
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, vec![[0.0, 0.0], [0.0, 10.0], [10.0, 0.0]]);
    }
}
