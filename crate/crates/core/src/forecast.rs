//! Iterative k-step nowcasts from the fitted growth model, the Lagrangian
//! persistence baseline, and the Marshall–Palmer Z–R conversion.

use crate::error::{Error, Result};
use crate::stcar::{CarParams, CarStructure};

/// Which forecaster produced a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Stcar,
    Persistence,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Stcar => "stcar",
            Method::Persistence => "persistence",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "stcar" => Some(Method::Stcar),
            "persistence" => Some(Method::Persistence),
            _ => None,
        }
    }
}

/// Per-array predictions for steps `1..=p` after the base scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub method: Method,
    /// `values[m − 1]` holds the predicted dBZ at step `m` (unclamped).
    pub values: Vec<Vec<f64>>,
    /// Predictive variance per step and array.
    pub variance: Vec<Vec<f64>>,
    /// Growth means fed into the recursion (empty for persistence).
    pub growth: Vec<Vec<f64>>,
}

impl Forecast {
    pub fn horizon(&self) -> usize {
        self.values.len()
    }
}

/// One past growth field with the CAR operator of its time.
#[derive(Debug, Clone, Copy)]
pub struct HistoryTerm<'a> {
    pub structure: &'a CarStructure,
    pub rho: f64,
    pub growth: &'a [f64],
}

/// Growth mean `Σ_j r_j B_{t′}⁻¹ B_{t′−j} G_{t′−j}` with `history[j − 1]`
/// holding time `t′ − j`. `B_{t′}⁻¹` is applied through a factorization.
pub fn predict_growth(base: &CarStructure, base_rho: f64, history: &[HistoryTerm], r: &[f64]) -> Result<Vec<f64>> {
    if r.is_empty() {
        return Err(Error::InvalidInput("temporal order q must be at least 1".into()));
    }
    if history.len() < r.len() {
        return Err(Error::InsufficientHistory(format!(
            "order {} needs {} past growth fields, got {}",
            r.len(),
            r.len(),
            history.len()
        )));
    }
    let n = base.len();
    let mut acc = vec![0.0; n];
    for (h, &rj) in history.iter().zip(r) {
        if h.growth.len() != n || h.structure.len() != n {
            return Err(Error::DimensionMismatch("history covers a different array set".into()));
        }
        let bg = h.structure.apply_b(h.rho, h.growth);
        acc.iter_mut().zip(&bg).for_each(|(a, b)| *a += rj * b);
    }
    let chol = base.factor(base_rho)?;
    Ok(base.solve_b(&chol, &acc))
}

/// Inputs for a model forecast from base time `T` (the last scan).
#[derive(Debug, Clone)]
pub struct ForecastInput<'a> {
    /// `Z_{T−1}` along each trajectory.
    pub z_prev: &'a [f64],
    /// `Z_T` along each trajectory.
    pub z_last: &'a [f64],
    /// Observed growth, most recent (`T − 1`) first.
    pub history: Vec<HistoryTerm<'a>>,
    /// Structures at `T, T+1, …` from the frozen-velocity positions; the
    /// last is reused if fewer than the horizon are given.
    pub future: &'a [CarStructure],
    /// CAR parameters carried forward from the last fitted time.
    pub params: CarParams,
    pub r: &'a [f64],
}

/// `ψ` weights of the scalar recursion `u_t = Σ_j r_j u_{t−j} + ε_t`.
fn psi_weights(r: &[f64], len: usize) -> Vec<f64> {
    let mut psi = vec![0.0; len];
    if len > 0 {
        psi[0] = 1.0;
    }
    for k in 1..len {
        psi[k] = r
            .iter()
            .enumerate()
            .filter(|(j, _)| *j < k)
            .map(|(j, rj)| rj * psi[k - j - 1])
            .sum();
    }
    psi
}

/// Iterate `Ẑ_{T+1} = Z_{T−1} + 2Ĝ_T`, `Ẑ_{T+m+1} = Ẑ_{T+m−1} + 2Ĝ_{T+m}`,
/// feeding each growth mean back as history.
///
/// Variances treat future `B` as time-invariant at the base structure:
/// step `m` gets `Σ_l c_{m,l}² · diag(σ²(W_D − ρW)⁻¹)` with `c` built from
/// the `ψ` weights of `r`.
pub fn forecast_reflectivity(input: &ForecastInput, p: usize) -> Result<Forecast> {
    if p == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
    }
    if input.future.is_empty() {
        return Err(Error::InvalidInput("no structure for the base time".into()));
    }
    let n = input.z_last.len();
    if input.z_prev.len() != n || input.future.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch(
            "forecast inputs cover different array sets".into(),
        ));
    }
    let q = input.r.len();
    if input.history.len() < q {
        return Err(Error::InsufficientHistory(format!(
            "order {q} needs {q} past growth fields, got {}",
            input.history.len()
        )));
    }
    let CarParams { rho, sigma } = input.params;
    let structure_at = |m: usize| &input.future[m.min(input.future.len() - 1)];

    let mut predicted: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(p);
    for m in 0..p {
        // History for Ĝ_{T+m}: predicted growth at T+m−1 … T, then observed.
        let mut hist: Vec<HistoryTerm> = Vec::with_capacity(q);
        for j in 1..=q {
            if j <= m {
                hist.push(HistoryTerm {
                    structure: structure_at(m - j),
                    rho,
                    growth: &predicted[m - j],
                });
            } else {
                hist.push(input.history[j - m - 1]);
            }
        }
        let g = predict_growth(structure_at(m), rho, &hist, input.r)?;
        let back: &[f64] = match m {
            0 => input.z_prev,
            1 => input.z_last,
            _ => &values[m - 2],
        };
        values.push(back.iter().zip(&g).map(|(z, g)| z + 2.0 * g).collect());
        predicted.push(g);
    }

    let base = structure_at(0);
    let var_g: Vec<f64> = if sigma > 0.0 {
        let chol = base.factor(rho)?;
        chol.inverse_diagonal().into_iter().map(|v| sigma * sigma * v).collect()
    } else {
        vec![0.0; n]
    };
    let psi = psi_weights(input.r, p);
    let variance = (1..=p)
        .map(|m| {
            // e^Z_{T+m} = 2 Σ_{k = m−1, m−3, …} e^G_{T+k}, e^G_{T+k} = Σ_l ψ_{k−l} ε_{T+l}.
            let coef: f64 = (0..m)
                .map(|l| {
                    let c: f64 = (l..m).filter(|k| (m - 1 - k) % 2 == 0).map(|k| 2.0 * psi[k - l]).sum();
                    c * c
                })
                .sum();
            var_g.iter().map(|v| coef * v).collect()
        })
        .collect();
    Ok(Forecast {
        method: Method::Stcar,
        values,
        variance,
        growth: predicted,
    })
}

/// Lagrangian persistence: `Ẑ_{T+m} = Z_T` carried along each trajectory.
pub fn persistence_baseline(z_last: &[f64], p: usize) -> Forecast {
    Forecast {
        method: Method::Persistence,
        values: vec![z_last.to_vec(); p],
        variance: vec![vec![0.0; z_last.len()]; p],
        growth: Vec::new(),
    }
}

/// Marshall–Palmer rain rate in mm/h: `Z = 200 R^1.6`, `Z = 10^(dBZ/10)`.
pub fn dbz_to_rainrate(dbz: f64) -> f64 {
    (10f64.powf(dbz / 10.0) / 200.0).powf(1.0 / 1.6)
}

/// Inverse of [`dbz_to_rainrate`]; non-positive rates map to `-inf`.
pub fn rainrate_to_dbz(rate: f64) -> f64 {
    10.0 * (200.0 * rate.powf(1.6)).log10()
}
