use rayon::prelude::*;

use super::{MotionConfig, VelocityField};
use crate::error::{Error, Result};
use crate::raster::{ArrayLayout, ReflectivityField};

/// Integer lags of the square search window, in visiting order: smallest
/// magnitude first, then lexicographic `(dy, dx)`. Only a strictly larger
/// correlation replaces the incumbent, so ties keep the earlier lag.
fn search_order(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut lags: Vec<(i64, i64)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    lags.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    lags
}

/// Square patch at an integer pixel centre, zero-filled where missing.
/// Returns `None` when too much of it is missing or off-grid.
fn integer_patch(field: &ReflectivityField, col: i64, row: i64, size: usize, max_missing: f64) -> Option<Vec<f64>> {
    let half = (size / 2) as i64;
    let (w, h) = (field.width() as i64, field.height() as i64);
    let mut out = Vec::with_capacity(size * size);
    let mut missing = 0usize;
    for r in row - half..=row + half {
        for c in col - half..=col + half {
            if c < 0 || r < 0 || c >= w || r >= h {
                missing += 1;
                out.push(0.0);
                continue;
            }
            match field.get(c as usize, r as usize) {
                Some(v) => out.push(v),
                None => {
                    missing += 1;
                    out.push(0.0);
                }
            }
        }
    }
    ((missing as f64) < max_missing * (size * size) as f64).then_some(out)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn pearson(a: &[f64], a_mean: f64, a_var: f64, b: &[f64]) -> Option<f64> {
    let (b_mean, b_var) = mean_var(b);
    if !(b_var > 0.0) || !(a_var > 0.0) {
        return None;
    }
    let n = a.len() as f64;
    let cov = a.iter().zip(b).map(|(x, y)| (x - a_mean) * (y - b_mean)).sum::<f64>() / n;
    Some((cov / (a_var * b_var).sqrt()).clamp(-1.0, 1.0))
}

/// Track echoes between two consecutive scans by maximising the Pearson
/// correlation of array patches over an exhaustive integer-lag window.
pub fn trec(
    scan_t: &ReflectivityField,
    scan_t1: &ReflectivityField,
    layout: &ArrayLayout,
    cfg: &MotionConfig,
) -> Result<VelocityField> {
    cfg.validate()?;
    if scan_t.grid != scan_t1.grid {
        return Err(Error::DimensionMismatch(format!(
            "scans have different geometry: {:?} vs {:?}",
            scan_t.grid, scan_t1.grid
        )));
    }
    if layout.is_empty() {
        return Err(Error::InvalidInput("empty layout".into()));
    }
    if let Some(&(c, r)) = layout
        .centers_px
        .iter()
        .find(|&&(c, r)| c + layout.half() >= scan_t.width() || r + layout.half() >= scan_t.height())
    {
        return Err(Error::DimensionMismatch(format!(
            "layout centre ({c}, {r}) does not fit a {}x{} scan",
            scan_t.width(),
            scan_t.height()
        )));
    }
    let lags = search_order(cfg.search_radius);
    let cell = scan_t.grid.cell_size;
    let size = layout.array_size;

    let results: Vec<([f64; 2], f64, bool)> = layout
        .centers_px
        .par_iter()
        .map(|&(c, r)| {
            let (c, r) = (c as i64, r as i64);
            let Some(src) = integer_patch(scan_t, c, r, size, cfg.max_missing_fraction) else {
                return ([0.0, 0.0], f64::NAN, false);
            };
            let (src_mean, src_var) = mean_var(&src);
            if src_var < cfg.min_patch_variance || !(src_var > 0.0) {
                return ([0.0, 0.0], f64::NAN, false);
            }
            let mut best: Option<((i64, i64), f64)> = None;
            for &(dx, dy) in &lags {
                let Some(cand) = integer_patch(scan_t1, c + dx, r + dy, size, cfg.max_missing_fraction) else {
                    continue;
                };
                if let Some(rho) = pearson(&src, src_mean, src_var, &cand) {
                    if best.is_none_or(|(_, b)| rho > b) {
                        best = Some(((dx, dy), rho));
                    }
                }
            }
            match best {
                Some(((dx, dy), rho)) => (
                    [dx as f64 * cell, dy as f64 * cell],
                    rho,
                    rho >= cfg.min_valid_correlation,
                ),
                None => ([0.0, 0.0], f64::NAN, false),
            }
        })
        .collect();

    let mut field = VelocityField::from_vectors(layout, &scan_t.grid, results.iter().map(|r| r.0).collect())?;
    field.corr = results.iter().map(|r| r.1).collect();
    field.valid = results.iter().map(|r| r.2).collect();
    Ok(field)
}
