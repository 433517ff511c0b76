use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CarParams, CarStructure};
use crate::error::{Error, Result};

/// Everything needed to simulate the space-time recursion
/// `B_t Y_t = Σ_j r_j B_{t−j} Y_{t−j} + ε_t`.
///
/// Step `k` uses `structures[k]` and `params[k]`; steps past the end reuse
/// the last entry.
#[derive(Debug, Clone)]
pub struct StcarProcess {
    pub structures: Vec<CarStructure>,
    pub params: Vec<CarParams>,
    pub r: Vec<f64>,
}

impl StcarProcess {
    pub fn new(structures: Vec<CarStructure>, params: Vec<CarParams>, r: Vec<f64>) -> Result<Self> {
        if structures.is_empty() || structures.len() != params.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} structures but {} parameter sets",
                structures.len(),
                params.len()
            )));
        }
        let n = structures[0].len();
        if structures.iter().any(|s| s.len() != n) {
            return Err(Error::DimensionMismatch(
                "structures cover different array counts".into(),
            ));
        }
        if r.is_empty() {
            return Err(Error::InvalidInput("temporal order q must be at least 1".into()));
        }
        Ok(StcarProcess { structures, params, r })
    }

    /// Time-invariant process.
    pub fn stationary(structure: CarStructure, params: CarParams, r: Vec<f64>) -> Result<Self> {
        Self::new(vec![structure], vec![params], r)
    }

    pub fn arrays(&self) -> usize {
        self.structures[0].len()
    }

    fn at(&self, k: usize) -> (&CarStructure, CarParams) {
        let k = k.min(self.structures.len() - 1);
        (&self.structures[k], self.params[k])
    }
}

/// Draw `horizon` consecutive fields `Y_t` after `burn_in` discarded steps.
/// History before the first step is zero.
pub fn sample_stcar(process: &StcarProcess, horizon: usize, burn_in: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = process.arrays();
    let q = process.r.len();
    // B_{t−j} Y_{t−j}, most recent first.
    let mut by_hist: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut out = Vec::with_capacity(horizon);
    for step in 0..burn_in + horizon {
        let k = step.saturating_sub(burn_in);
        let (s, p) = process.at(k);
        if !(p.sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma must be non-negative, got {}",
                p.sigma
            )));
        }
        let chol = s.factor(p.rho)?;
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lz = chol.mul_lower(&z);
        // ε = σ W_D⁻¹ L z has covariance σ² W_D⁻¹ (W_D − ρW) W_D⁻¹.
        let mut rhs: Vec<f64> = lz.iter().zip(&s.row_sums).map(|(a, d)| p.sigma * a / d).collect();
        for (j, past) in by_hist.iter().enumerate() {
            for (x, y) in rhs.iter_mut().zip(past) {
                *x += process.r[j] * y;
            }
        }
        let y = s.solve_b(&chol, &rhs);
        by_hist.insert(0, rhs);
        by_hist.truncate(q);
        if step >= burn_in {
            out.push(y);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stcar::{car_covariance, lattice_points, neighbour_sets, WeightFn};

    fn rook(rows: usize, cols: usize) -> CarStructure {
        let pts = lattice_points(rows, cols, 1.0);
        CarStructure::from_neighbours(neighbour_sets(&pts, 1.2).unwrap(), &pts, 1.2, WeightFn::Binary).unwrap()
    }

    #[test]
    fn zero_sigma_gives_zero_fields() {
        let p = StcarProcess::stationary(rook(3, 3), CarParams { rho: 0.4, sigma: 0.0 }, vec![0.9]).unwrap();
        for y in sample_stcar(&p, 4, 0, 1).unwrap() {
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_draw_covariance_matches_car() {
        let s = rook(3, 3);
        let params = CarParams { rho: 0.6, sigma: 1.5 };
        let cov = car_covariance(&s, params).unwrap();
        let p = StcarProcess::stationary(s, params, vec![0.0]).unwrap();
        let reps = 10_000;
        let draws: Vec<Vec<f64>> = (0..reps)
            .map(|k| sample_stcar(&p, 1, 0, k as u64).unwrap().remove(0))
            .collect();
        let n = 9;
        for i in 0..n {
            for j in 0..n {
                let prods: Vec<f64> = draws.iter().map(|y| y[i] * y[j]).collect();
                let m = prods.iter().sum::<f64>() / reps as f64;
                let var = prods.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
                let se = (var / reps as f64).sqrt();
                assert!(
                    (m - cov[(i, j)]).abs() < 3.0 * se + 1e-12,
                    "({i},{j}): {m} vs {}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn rho_zero_gives_heteroscedastic_independent_draws() {
        let s = rook(3, 3);
        let sums = s.row_sums.clone();
        let p = StcarProcess::stationary(s, CarParams { rho: 0.0, sigma: 1.0 }, vec![0.0]).unwrap();
        let reps = 8000;
        let draws: Vec<Vec<f64>> = (0..reps)
            .map(|k| sample_stcar(&p, 1, 0, 100 + k as u64).unwrap().remove(0))
            .collect();
        for i in 0..9 {
            let v = draws.iter().map(|y| y[i] * y[i]).sum::<f64>() / reps as f64;
            let expect = 1.0 / sums[i];
            assert!((v - expect).abs() < 4.0 * expect * (2.0 / reps as f64).sqrt());
        }
    }

    #[test]
    fn conditional_mean_slope_is_rho() {
        let s = rook(8, 8);
        let rho = 0.7;
        let p = StcarProcess::stationary(s.clone(), CarParams { rho, sigma: 1.0 }, vec![0.0]).unwrap();
        // E[y_i | rest] = ρ Σ_j w_ij y_j / w_i+; regress y_i on that average,
        // weighting by w_i+ since Var(y_i | rest) = σ² / w_i+.
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for k in 0..1500 {
            let y = sample_stcar(&p, 1, 0, k).unwrap().remove(0);
            let wy = s.w.mul_vec(&y);
            for i in 0..s.len() {
                let a = wy[i] / s.row_sums[i];
                sxy += s.row_sums[i] * a * y[i];
                sxx += s.row_sums[i] * a * a;
            }
        }
        let slope = sxy / sxx;
        assert!((slope - rho).abs() < 0.03, "{slope}");
    }

    #[test]
    fn recursion_identity_holds_on_draws() {
        let s = rook(4, 4);
        let params = CarParams { rho: 0.5, sigma: 1.0 };
        let r = vec![0.9, -0.3];
        let p = StcarProcess::stationary(s.clone(), params, r.clone()).unwrap();
        let ys = sample_stcar(&p, 6, 0, 3).unwrap();
        let zs = sample_stcar(
            &StcarProcess::stationary(s.clone(), params, vec![0.0, 0.0]).unwrap(),
            6,
            0,
            3,
        )
        .unwrap();
        // Same seed ⇒ same innovations: B y_t − Σ r_j B y_{t−j} = B z_t.
        for t in 0..6 {
            let mut lhs = s.apply_b(0.5, &ys[t]);
            for (j, rj) in r.iter().enumerate() {
                if t > j {
                    let b = s.apply_b(0.5, &ys[t - j - 1]);
                    lhs.iter_mut().zip(&b).for_each(|(a, x)| *a -= rj * x);
                }
            }
            let eps = s.apply_b(0.5, &zs[t]);
            for (a, e) in lhs.iter().zip(&eps) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_rho_is_rejected() {
        let p = StcarProcess::stationary(rook(3, 3), CarParams { rho: 1.5, sigma: 1.0 }, vec![0.5]).unwrap();
        assert!(matches!(
            sample_stcar(&p, 2, 0, 0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
