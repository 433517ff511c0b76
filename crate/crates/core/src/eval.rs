//! Forecast verification: per-horizon and accumulative mean-squared error
//! over all valid arrays and over arrays whose observed reflectivity exceeds
//! a threshold.
//!
//! The accumulative MSE at horizon `m` is the running mean of the
//! per-horizon MSEs for horizons `1..=m`. Horizons with no scored arrays are
//! skipped in the running mean.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advect::sample_reflectivity;
use crate::error::{Error, Result};
use crate::pipeline::ForecastRow;
use crate::raster::{write_atomic, ReflectivityField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub method: String,
    pub horizon: usize,
    pub mse_all: f64,
    pub n_all: usize,
    pub acc_mse_all: f64,
    pub mse_thresh: f64,
    pub n_thresh: usize,
    pub acc_mse_thresh: f64,
}

/// Running mean of finite entries; NaN until the first finite one.
pub fn accumulative(per_horizon: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    per_horizon
        .iter()
        .map(|&v| {
            if v.is_finite() {
                sum += v;
                n += 1;
            }
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        })
        .collect()
}

/// Score one method. `predicted[m][i]` and `observed[m][i]` are the values
/// of array `i` at horizon `m + 1`; entries with `valid` false or any NaN are
/// skipped.
pub fn score(
    method: &str,
    predicted: &[Vec<f64>],
    observed: &[Vec<f64>],
    valid: &[Vec<bool>],
    threshold: f64,
) -> Result<Vec<HorizonMetrics>> {
    if predicted.len() != observed.len() || predicted.len() != valid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} forecast horizons, {} observed, {} masks",
            predicted.len(),
            observed.len(),
            valid.len()
        )));
    }
    let mut per = Vec::new();
    for ((p, o), v) in predicted.iter().zip(observed).zip(valid) {
        if p.len() != o.len() || p.len() != v.len() {
            return Err(Error::DimensionMismatch("array counts differ within a horizon".into()));
        }
        let (mut s_all, mut n_all, mut s_thr, mut n_thr) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..p.len() {
            if !v[i] || !p[i].is_finite() || !o[i].is_finite() {
                continue;
            }
            let e = (p[i] - o[i]).powi(2);
            s_all += e;
            n_all += 1;
            if o[i] > threshold {
                s_thr += e;
                n_thr += 1;
            }
        }
        let mean = |s: f64, n: usize| if n > 0 { s / n as f64 } else { f64::NAN };
        per.push((mean(s_all, n_all), n_all, mean(s_thr, n_thr), n_thr));
    }
    let acc_all = accumulative(&per.iter().map(|x| x.0).collect::<Vec<_>>());
    let acc_thr = accumulative(&per.iter().map(|x| x.2).collect::<Vec<_>>());
    Ok(per
        .iter()
        .enumerate()
        .map(|(m, &(mse_all, n_all, mse_thresh, n_thresh))| HorizonMetrics {
            method: method.to_string(),
            horizon: m + 1,
            mse_all,
            n_all,
            acc_mse_all: acc_all[m],
            mse_thresh,
            n_thresh,
            acc_mse_thresh: acc_thr[m],
        })
        .collect())
}

/// Score forecast table rows against truth scans matched by timestamp.
/// Truth is the patch mean at each forecast position.
pub fn evaluate(
    rows: &[ForecastRow],
    truth: &[ReflectivityField],
    array_size: usize,
    max_missing: f64,
    threshold: f64,
) -> Result<Vec<HorizonMetrics>> {
    let scans: BTreeMap<i64, &ReflectivityField> = truth.iter().map(|f| (f.timestamp, f)).collect();
    let mut by_method: BTreeMap<&str, BTreeMap<usize, Vec<&ForecastRow>>> = BTreeMap::new();
    for r in rows {
        by_method
            .entry(&r.method)
            .or_default()
            .entry(r.step)
            .or_default()
            .push(r);
    }
    if by_method.is_empty() {
        return Err(Error::InvalidInput("forecast table is empty".into()));
    }
    let mut horizons: Option<Vec<usize>> = None;
    let mut out = Vec::new();
    for (method, steps) in &by_method {
        let hs: Vec<usize> = steps.keys().copied().collect();
        if hs != (1..=hs.len()).collect::<Vec<_>>() {
            return Err(Error::DimensionMismatch(format!(
                "{method}: horizons {hs:?} are not 1..=n"
            )));
        }
        match &horizons {
            Some(h) if *h != hs => {
                return Err(Error::DimensionMismatch(format!(
                    "{method} has {} horizons, other methods {}",
                    hs.len(),
                    h.len()
                )))
            }
            _ => horizons = Some(hs),
        }
        let (mut pred, mut obs, mut valid) = (Vec::new(), Vec::new(), Vec::new());
        for (step, rs) in steps {
            let ts = rs[0].timestamp;
            if rs.iter().any(|r| r.timestamp != ts) {
                return Err(Error::InvalidInput(format!("{method} step {step}: mixed timestamps")));
            }
            let scan = scans.get(&ts).ok_or_else(|| {
                Error::DimensionMismatch(format!("{method} step {step}: no truth scan at timestamp {ts}"))
            })?;
            let pos: Vec<[f64; 2]> = rs.iter().map(|r| [r.x_km, r.y_km]).collect();
            let t = sample_reflectivity(scan, &pos, array_size, max_missing);
            pred.push(rs.iter().map(|r| r.z_dbz).collect());
            valid.push(rs.iter().zip(&t.valid).map(|(r, &v)| r.valid && v).collect());
            obs.push(t.values);
        }
        out.extend(score(method, &pred, &obs, &valid, threshold)?);
    }
    Ok(out)
}

pub fn write_metrics_csv(metrics: &[HorizonMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in metrics {
        w.serialize(m)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Side-by-side accumulative MSE per horizon, one column per method, for
/// all arrays and for the thresholded subset.
pub fn format_table(metrics: &[HorizonMetrics], threshold: f64) -> String {
    let mut methods: Vec<&str> = metrics.iter().map(|m| m.method.as_str()).collect();
    methods.sort();
    methods.dedup();
    let max_h = metrics.iter().map(|m| m.horizon).max().unwrap_or(0);
    let mut s = String::new();
    let panels: [(String, fn(&HorizonMetrics) -> f64); 2] = [
        ("all valid arrays".to_string(), |m| m.acc_mse_all),
        (format!("observed > {threshold} dBZ"), |m| m.acc_mse_thresh),
    ];
    for (title, pick) in panels {
        let _ = writeln!(s, "accumulative MSE, {title}");
        let _ = write!(s, "{:>8}", "horizon");
        for m in &methods {
            let _ = write!(s, " {m:>12}");
        }
        s.push('\n');
        for h in 1..=max_h {
            let _ = write!(s, "{h:>8}");
            for name in &methods {
                let v = metrics
                    .iter()
                    .find(|x| x.method == *name && x.horizon == h)
                    .map_or(f64::NAN, pick);
                let _ = write!(s, " {v:>12.4}");
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridSpec;
    use proptest::prelude::*;

    #[test]
    fn perfect_forecast_scores_zero() {
        let v = vec![vec![10.0, 40.0, 50.0]; 4];
        let ok = vec![vec![true; 3]; 4];
        for m in score("x", &v, &v, &ok, 35.0).unwrap() {
            assert_eq!((m.mse_all, m.acc_mse_all, m.mse_thresh), (0.0, 0.0, 0.0));
            assert_eq!((m.n_all, m.n_thresh), (3, 2));
        }
    }

    #[test]
    fn unit_bias_gives_unit_accumulative_mse() {
        let obs = vec![vec![10.0, 40.0, 50.0]; 6];
        let pred: Vec<Vec<f64>> = obs.iter().map(|r| r.iter().map(|x| x + 1.0).collect()).collect();
        let ok = vec![vec![true; 3]; 6];
        for m in score("x", &pred, &obs, &ok, 35.0).unwrap() {
            assert!((m.acc_mse_all - 1.0).abs() < 1e-15);
            assert!((m.acc_mse_thresh - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn accumulative_is_running_mean() {
        let a = accumulative(&[4.0, f64::NAN, 2.0, 0.0]);
        assert!(a[0] == 4.0 && a[1] == 4.0 && a[2] == 3.0 && a[3] == 2.0);
        assert!(accumulative(&[f64::NAN])[0].is_nan());
    }

    #[test]
    fn invalid_and_below_threshold_are_excluded() {
        let pred = vec![vec![0.0, 0.0, 0.0]];
        let obs = vec![vec![2.0, 40.0, 100.0]];
        let ok = vec![vec![true, true, false]];
        let m = &score("x", &pred, &obs, &ok, 35.0).unwrap()[0];
        assert_eq!((m.n_all, m.n_thresh), (2, 1));
        assert!((m.mse_all - (4.0 + 1600.0) / 2.0).abs() < 1e-12);
        assert_eq!(m.mse_thresh, 1600.0);
    }

    fn row(method: &str, step: usize, ts: i64, z: f64) -> ForecastRow {
        ForecastRow {
            method: method.into(),
            step,
            timestamp: ts,
            array_id: 0,
            x_km: 5.0,
            y_km: 5.0,
            z_dbz: z,
            variance: 0.0,
            valid: true,
        }
    }

    #[test]
    fn evaluates_rows_against_scans() {
        let grid = GridSpec::new(11, 11, 0.0, 0.0, 1.0).unwrap();
        let truth: Vec<ReflectivityField> = (1..=2)
            .map(|k| ReflectivityField::constant(grid, 300 * k, 30.0 + k as f64).unwrap())
            .collect();
        let rows = vec![row("a", 1, 300, 31.0), row("a", 2, 600, 30.0)];
        let m = evaluate(&rows, &truth, 5, 0.2, 35.0).unwrap();
        assert_eq!(m[0].mse_all, 0.0);
        assert!((m[1].mse_all - 4.0).abs() < 1e-12);
        assert!((m[1].acc_mse_all - 2.0).abs() < 1e-12);
        assert!(m[0].acc_mse_thresh.is_nan());
        assert!(format_table(&m, 35.0).contains("horizon"));
    }

    #[test]
    fn missing_truth_scan_is_a_horizon_mismatch() {
        let grid = GridSpec::new(11, 11, 0.0, 0.0, 1.0).unwrap();
        let truth = vec![ReflectivityField::constant(grid, 300, 1.0).unwrap()];
        let rows = vec![row("a", 1, 300, 1.0), row("a", 2, 600, 1.0)];
        assert!(matches!(
            evaluate(&rows, &truth, 5, 0.2, 35.0),
            Err(Error::DimensionMismatch(_))
        ));
        let gap = vec![row("a", 1, 300, 1.0), row("a", 3, 300, 1.0)];
        assert!(evaluate(&gap, &truth, 5, 0.2, 35.0).is_err());
        let uneven = vec![row("a", 1, 300, 1.0), row("b", 1, 300, 1.0), row("b", 2, 300, 1.0)];
        assert!(evaluate(&uneven, &truth, 5, 0.2, 35.0).is_err());
    }

    proptest! {
        #[test]
        fn constant_error_keeps_accumulative_flat(e in 0.0f64..10.0, h in 1usize..8) {
            let acc = accumulative(&vec![e; h]);
            for a in acc {
                prop_assert!((a - e).abs() <= 1e-12 * e.max(1.0));
            }
        }

        #[test]
        fn accumulative_lies_between_extremes(v in proptest::collection::vec(0.0f64..100.0, 1..10)) {
            let acc = accumulative(&v);
            for (m, a) in acc.iter().enumerate() {
                let lo = v[..=m].iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v[..=m].iter().cloned().fold(0.0, f64::max);
                prop_assert!(*a >= lo - 1e-9 && *a <= hi + 1e-9);
            }
        }
    }
}
