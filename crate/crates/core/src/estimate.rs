//! Two-step estimation: per-time iteratively reweighted GLS for the mean
//! coefficients and CAR parameters, then weighted least squares across
//! times for the temporal coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SparseSym;
use crate::stcar::{rho_bounds, CarStructure};

/// Settings for the estimation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    pub max_iterations: usize,
    /// Relative change of `γ`, `ρ` and `σ` below which IRWGLS stops. A
    /// non-finite value stops after the first (OLS-based) round.
    pub tolerance: f64,
    /// Golden-section stopping width, relative to the admissible interval.
    pub rho_tolerance: f64,
    pub multistarts: usize,
    /// Ridge on the normal equations, relative to their mean diagonal.
    pub ridge: f64,
    /// Temporal order.
    pub q: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            max_iterations: 20,
            tolerance: 1e-4,
            rho_tolerance: 1e-9,
            multistarts: 5,
            ridge: 1e-8,
            q: 2,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if self.max_iterations == 0 {
            return bad("max_iterations", "must be at least 1");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance", "must be positive");
        }
        if !(self.rho_tolerance > 0.0 && self.rho_tolerance < 0.1) {
            return bad("rho_tolerance", "must lie in (0, 0.1)");
        }
        if self.multistarts == 0 {
            return bad("multistarts", "must be at least 1");
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return bad("ridge", "must be a non-negative number");
        }
        if self.q == 0 {
            return bad("q", "must be at least 1");
        }
        Ok(())
    }
}

/// GLS coefficients `(Fᵀ Q F + εI)⁻¹ Fᵀ Q G` for precision `Q` (identity
/// when `None`). The scale of `Q` does not matter.
pub fn fgls_gamma(g: &[f64], f: &DMatrix<f64>, precision: Option<&SparseSym>, ridge: f64) -> Result<Vec<f64>> {
    let (n, p) = f.shape();
    if g.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} responses for {n} design rows",
            g.len()
        )));
    }
    if let Some(q) = precision {
        if q.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} precision for {n} rows",
                q.dim(),
                q.dim()
            )));
        }
    }
    // QF column by column.
    let qf = match precision {
        None => f.clone(),
        Some(q) => {
            let mut out = DMatrix::zeros(n, p);
            for i in 0..n {
                for &(j, a) in q.row(i) {
                    for k in 0..p {
                        out[(i, k)] += a * f[(j, k)];
                    }
                }
            }
            out
        }
    };
    let mut a = qf.transpose() * f;
    a = (&a + a.transpose()) * 0.5;
    let rhs = qf.transpose() * DVector::from_column_slice(g);
    let eps = ridge * a.trace() / p as f64;
    for k in 0..p {
        a[(k, k)] += eps;
    }
    let sol = match a.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Degenerate("normal equations are singular even after the ridge".into()))?,
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite GLS coefficients".into()));
    }
    Ok(sol.iter().cloned().collect())
}

/// Result of the profile likelihood maximisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileFit {
    pub rho: f64,
    pub sigma: f64,
    pub loglik: f64,
}

/// Profile objective `(n/2) log(yᵀPy/n) − ½ log|P|` with `P = W_D − ρW`;
/// `+∞` where `P` is not positive definite.
pub fn profile_objective(y: &[f64], s: &CarStructure, rho: f64) -> f64 {
    let n = y.len() as f64;
    let Ok(chol) = s.factor(rho) else {
        return f64::INFINITY;
    };
    let quad = s.precision(rho).quad_form(y);
    if !(quad > 0.0) {
        return f64::INFINITY;
    }
    0.5 * n * (quad / n).ln() - 0.5 * chol.log_det()
}

/// Full Gaussian log-likelihood of `y ~ N(0, σ² P⁻¹)`.
pub fn car_loglik(y: &[f64], s: &CarStructure, rho: f64, sigma: f64) -> Result<f64> {
    let chol = s.factor(rho)?;
    let n = y.len() as f64;
    let s2 = sigma * sigma;
    let quad = s.precision(rho).quad_form(y);
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * n * s2.ln() + 0.5 * chol.log_det() - quad / (2.0 * s2))
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximise the profile likelihood over `ρ` in the open admissible interval
/// `bounds`, then set `σ̂² = yᵀ(W_D − ρ̂W)y / n`.
pub fn profile_mle_with_bounds(
    y: &[f64],
    s: &CarStructure,
    bounds: (f64, f64),
    cfg: &EstimationConfig,
) -> Result<ProfileFit> {
    if y.len() != s.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals for {} arrays",
            y.len(),
            s.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("residuals must be finite".into()));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all residuals are zero; sigma estimate is 0".into()));
    }
    let (lo, hi) = bounds;
    if !(lo < hi) {
        return Err(Error::Degenerate(format!("empty rho interval ({lo}, {hi})")));
    }
    let width = hi - lo;
    let (a, b) = (lo + 1e-6 * width, hi - 1e-6 * width);
    let obj = |rho: f64| profile_objective(y, s, rho);
    let k = cfg.multistarts;
    let step = (b - a) / (k + 1) as f64;
    let mut best: Option<(f64, f64)> = None;
    for i in 1..=k {
        let (l, r) = (a + (i - 1) as f64 * step, a + (i + 1) as f64 * step);
        let cand = golden_section(&obj, l, r, cfg.rho_tolerance * width);
        if cand.1.is_finite() && best.is_none_or(|(_, v)| cand.1 < v) {
            best = Some(cand);
        }
    }
    let Some((rho, value)) = best else {
        return Err(Error::Degenerate("profile objective is not finite anywhere".into()));
    };
    let n = y.len() as f64;
    let sigma = (s.precision(rho).quad_form(y) / n).sqrt();
    Ok(ProfileFit {
        rho,
        sigma,
        loglik: -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + 1.0) - value,
    })
}

/// [`profile_mle_with_bounds`] over the structure's own admissible interval.
pub fn profile_mle_rho_sigma(y: &[f64], s: &CarStructure, cfg: &EstimationConfig) -> Result<ProfileFit> {
    profile_mle_with_bounds(y, s, rho_bounds(s), cfg)
}

/// Per-time IRWGLS estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct IrwglsFit {
    pub gamma: Vec<f64>,
    pub rho: f64,
    pub sigma: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn rel_change(new: f64, old: f64, floor: f64) -> f64 {
    (new - old).abs() / old.abs().max(floor)
}

/// Alternate GLS for `γ` and profile MLE for `(ρ, σ)`, starting from OLS.
pub fn irwgls(g: &[f64], f: &DMatrix<f64>, s: &CarStructure, cfg: &EstimationConfig) -> Result<IrwglsFit> {
    cfg.validate()?;
    irwgls_with_bounds(g, f, s, rho_bounds(s), cfg)
}

/// [`irwgls`] with precomputed `ρ` bounds.
pub fn irwgls_with_bounds(
    g: &[f64],
    f: &DMatrix<f64>,
    s: &CarStructure,
    bounds: (f64, f64),
    cfg: &EstimationConfig,
) -> Result<IrwglsFit> {
    if g.len() != s.len() || f.nrows() != s.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} responses, {} design rows, {} arrays",
            g.len(),
            f.nrows(),
            s.len()
        )));
    }
    let residual = |gamma: &[f64]| -> Vec<f64> {
        let fit = f * DVector::from_column_slice(gamma);
        g.iter().zip(fit.iter()).map(|(a, b)| a - b).collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut gamma = fgls_gamma(g, f, None, cfg.ridge)?;
    let y = residual(&gamma);
    if norm(&y) <= 1e-7 * norm(g).max(1.0) {
        return Ok(IrwglsFit {
            gamma,
            rho: 0.0,
            sigma: 0.0,
            loglik: f64::INFINITY,
            iterations: 1,
            converged: true,
        });
    }
    let mut prof = profile_mle_with_bounds(&y, s, bounds, cfg)?;
    if !cfg.tolerance.is_finite() {
        return Ok(IrwglsFit {
            gamma,
            rho: prof.rho,
            sigma: prof.sigma,
            loglik: prof.loglik,
            iterations: 1,
            converged: true,
        });
    }
    let mut iterations = 1;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let q = s.precision(prof.rho);
        let next_gamma = fgls_gamma(g, f, Some(&q), cfg.ridge)?;
        let y = residual(&next_gamma);
        let next = profile_mle_with_bounds(&y, s, bounds, cfg)?;
        let dg = norm(&next_gamma.iter().zip(&gamma).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&gamma).max(1e-12);
        let dr = rel_change(next.rho, prof.rho, 1e-3);
        let ds = rel_change(next.sigma, prof.sigma, 1e-12);
        gamma = next_gamma;
        prof = next;
        if dg < cfg.tolerance && dr < cfg.tolerance && ds < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(IrwglsFit {
        gamma,
        rho: prof.rho,
        sigma: prof.sigma,
        loglik: prof.loglik,
        iterations,
        converged,
    })
}

/// Per-time inputs to the temporal regression: growth values on the common
/// array set, the diagonal of `W_D` and the CAR scale.
#[derive(Debug, Clone, Copy)]
pub struct TemporalSlice<'a> {
    pub growth: &'a [f64],
    pub row_sums: &'a [f64],
    pub sigma: f64,
}

/// Weighted least squares for `r` in `G_t = Σ_j r_j G_{t−j} + e_t`, with
/// weights `w_{i+}(t) / σ_t²`. Slices are in time order.
pub fn wls_temporal(slices: &[TemporalSlice], q: usize) -> Result<Vec<f64>> {
    if q == 0 {
        return Err(Error::InvalidInput("temporal order q must be at least 1".into()));
    }
    if slices.len() < q + 1 {
        return Err(Error::InsufficientHistory(format!(
            "order {q} needs at least {} growth fields, got {}",
            q + 1,
            slices.len()
        )));
    }
    let n = slices[0].growth.len();
    if slices.iter().any(|s| s.growth.len() != n || s.row_sums.len() != n) {
        return Err(Error::DimensionMismatch(
            "growth fields cover different array sets".into(),
        ));
    }
    let smax = slices.iter().map(|s| s.sigma * s.sigma).fold(0.0, f64::max);
    let floor = if smax > 0.0 { 1e-12 * smax } else { 1.0 };
    let mut a = DMatrix::<f64>::zeros(q, q);
    let mut b = DVector::<f64>::zeros(q);
    for t in q..slices.len() {
        let s2 = (slices[t].sigma * slices[t].sigma).max(floor);
        for i in 0..n {
            let w = slices[t].row_sums[i] / s2;
            let x: Vec<f64> = (1..=q).map(|j| slices[t - j].growth[i]).collect();
            for r in 0..q {
                b[r] += w * x[r] * slices[t].growth[i];
                for c in 0..q {
                    a[(r, c)] += w * x[r] * x[c];
                }
            }
        }
    }
    let scale = (0..q).map(|k| a[(k, k)]).fold(0.0, f64::max);
    let sol = a
        .clone()
        .cholesky()
        .filter(|c| (0..q).all(|k| c.l()[(k, k)].powi(2) > 1e-12 * scale))
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::Degenerate("temporal normal equations are singular".into()))?;
    Ok(sol.iter().cloned().collect())
}
