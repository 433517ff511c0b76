//! End-to-end orchestration: motion, trajectories, growth extraction,
//! per-time IRWGLS, temporal regression, forecasting and the fit file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advect::{footprint_inside, growth_from_scans, sample_reflectivity, ArrayValues, GrowthField};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::estimate::{irwgls_with_bounds, wls_temporal, TemporalSlice};
use crate::forecast::{forecast_reflectivity, persistence_baseline, Forecast, ForecastInput, HistoryTerm};
use crate::kv::{format_list, parse_list};
use crate::motion::{smooth_velocity, translate, trec, MotionConfig, VelocityField};
use crate::raster::{
    build_layout, check_sequence, write_atomic, write_field_annotated, ArrayLayout, GridSpec, Point, ReflectivityField,
    TrackState, MISSING,
};
use crate::stcar::{neighbour_sets, place_kernels, rho_bounds, CarParams, CarStructure, WeightFn};

/// Motion, trajectories and growth for one scan sequence.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: GridSpec,
    pub layout: ArrayLayout,
    /// Smoothed motion between scans `t` and `t + 1`, `t = 1..T−1`.
    pub velocities: Vec<VelocityField>,
    /// Positions of every layout array at `t = 1..T`.
    pub track: TrackState,
    /// Patch-mean reflectivity per time. Validity is sticky: once an
    /// array's footprint leaves the grid it stays invalid.
    pub z: Vec<ArrayValues>,
    /// Growth for `t = 2..T−1`.
    pub growth: Vec<GrowthField>,
    pub base_timestamp: i64,
    pub time_step: i64,
}

impl Prepared {
    pub fn times(&self) -> usize {
        self.z.len()
    }
}

/// Track every layout array through the sequence and extract growth.
pub fn prepare(
    fields: &[ReflectivityField],
    motion: &MotionConfig,
    array_size: usize,
    spacing: usize,
) -> Result<Prepared> {
    check_sequence(fields)?;
    if fields.len() < 3 {
        return Err(Error::InsufficientHistory(format!(
            "need at least 3 scans, got {}",
            fields.len()
        )));
    }
    let grid = fields[0].grid;
    let layout = build_layout(grid.width, grid.height, array_size, spacing)?;
    let velocities = fields
        .windows(2)
        .map(|w| smooth_velocity(&trec(&w[0], &w[1], &layout, motion)?, motion))
        .collect::<Result<Vec<_>>>()?;
    let mut track = TrackState::from_layout(&layout, &grid);
    for v in &velocities {
        track = translate(&track, v, 1)?;
    }
    let mut z: Vec<ArrayValues> = Vec::with_capacity(fields.len());
    for (k, f) in fields.iter().enumerate() {
        let pos = track.at(k + 1);
        let mut s = sample_reflectivity(f, pos, array_size, motion.max_missing_fraction);
        let inside = footprint_inside(&grid, pos, array_size);
        for i in 0..s.len() {
            let prev_ok = k == 0 || z[k - 1].valid[i];
            s.valid[i] = s.valid[i] && inside[i] && prev_ok;
        }
        z.push(s);
    }
    let growth = (2..fields.len())
        .map(|t| growth_from_scans(&z[t - 2], &z[t], t))
        .collect::<Result<Vec<_>>>()?;
    let n = fields.len();
    Ok(Prepared {
        grid,
        layout,
        velocities,
        track,
        z,
        growth,
        base_timestamp: fields[n - 1].timestamp,
        time_step: fields[1].timestamp - fields[0].timestamp,
    })
}

/// Arrays valid at the last scan, after iteratively dropping any with no
/// neighbour inside `d` (km, initial positions).
pub fn select_active(prepared: &Prepared, d: f64) -> Result<Vec<usize>> {
    let last = prepared.z.last().expect("at least one scan");
    let mut keep: Vec<usize> = (0..last.len()).filter(|&i| last.valid[i]).collect();
    loop {
        let pts: Vec<Point> = keep.iter().map(|&i| prepared.track.initial()[i]).collect();
        let nb = neighbour_sets(&pts, d)?;
        let next: Vec<usize> = keep
            .iter()
            .zip(&nb)
            .filter(|(_, n)| !n.is_empty())
            .map(|(&i, _)| i)
            .collect();
        if next.len() == keep.len() {
            return Ok(keep);
        }
        keep = next;
    }
}

/// CAR structure over the active arrays at the given positions.
fn structure_at(nb: &[Vec<usize>], positions: &[Point], d: f64, wf: WeightFn) -> Result<CarStructure> {
    CarStructure::from_neighbours(nb.to_vec(), positions, d, wf)
}

fn active_positions(track: &TrackState, t: usize, active: &[usize]) -> Vec<Point> {
    let p = track.at(t);
    active.iter().map(|&i| p[i]).collect()
}

/// Estimates for one growth time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFit {
    pub t: usize,
    pub gamma: Vec<f64>,
    pub centers: Vec<Point>,
    pub rho: f64,
    pub sigma: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fitted space-time model over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct StcarFit {
    pub array_size: usize,
    pub spacing: usize,
    /// Neighbourhood distance, km.
    pub d: f64,
    pub weight_fn: WeightFn,
    pub q: usize,
    pub kernels: usize,
    pub bandwidth: f64,
    /// Layout indices of the arrays in the fit, in fit order.
    pub active: Vec<usize>,
    pub times: Vec<TimeFit>,
    pub r: Vec<f64>,
}

impl StcarFit {
    pub fn last(&self) -> &TimeFit {
        self.times.last().expect("a fit holds at least one time")
    }
}

/// A fit together with the intermediate products it was built from.
#[derive(Debug, Clone)]
pub struct FitRun {
    pub prepared: Prepared,
    pub fit: StcarFit,
    pub warnings: Vec<String>,
}

/// Fit the growth model to a scan sequence.
pub fn fit_sequence(fields: &[ReflectivityField], cfg: &PipelineConfig) -> Result<FitRun> {
    cfg.validate()?;
    let q = cfg.estimation.q;
    if fields.len() < q + 3 {
        return Err(Error::InsufficientHistory(format!(
            "order q = {q} needs at least {} scans, got {}",
            q + 3,
            fields.len()
        )));
    }
    let prepared = prepare(fields, &cfg.motion, cfg.array_size, cfg.spacing)?;
    fit_prepared(prepared, cfg)
}

/// Fit from already prepared motion and growth.
pub fn fit_prepared(prepared: Prepared, cfg: &PipelineConfig) -> Result<FitRun> {
    let q = cfg.estimation.q;
    let d = cfg.distance_km(prepared.grid.cell_size);
    let active = select_active(&prepared, d)?;
    let need = cfg.kernels.max(3 * cfg.kernels / 2).max(4);
    if active.len() < need {
        return Err(Error::Degenerate(format!(
            "only {} arrays stay on the grid with neighbours; at least {need} are needed",
            active.len()
        )));
    }
    let init: Vec<Point> = active_positions(&prepared.track, 1, &active);
    let nb = neighbour_sets(&init, d)?;
    let mut warnings = Vec::new();

    let times: Vec<TimeFit> = prepared
        .growth
        .par_iter()
        .map(|gf| -> Result<TimeFit> {
            let t = gf.t;
            let pos = active_positions(&prepared.track, t, &active);
            let g = gf.subset(&active);
            let s = structure_at(&nb, &pos, d, cfg.weight_fn)?;
            let km = place_kernels(&g, &pos, cfg.kernels, cfg.bandwidth, cfg.seed.wrapping_add(t as u64))?;
            let f = km.design(&pos);
            let fit = irwgls_with_bounds(&g.values, &f, &s, rho_bounds(&s), &cfg.estimation)?;
            Ok(TimeFit {
                t,
                gamma: fit.gamma,
                centers: km.centers,
                rho: fit.rho,
                sigma: fit.sigma,
                loglik: fit.loglik,
                iterations: fit.iterations,
                converged: fit.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for tf in &times {
        if !tf.converged {
            warnings.push(format!(
                "time {}: IRWGLS stopped after {} iterations without converging",
                tf.t, tf.iterations
            ));
        }
    }

    let subsets: Vec<GrowthField> = prepared.growth.iter().map(|g| g.subset(&active)).collect();
    let row_sums: Vec<Vec<f64>> = prepared
        .growth
        .iter()
        .map(|g| {
            let pos = active_positions(&prepared.track, g.t, &active);
            structure_at(&nb, &pos, d, cfg.weight_fn).map(|s| s.row_sums)
        })
        .collect::<Result<Vec<_>>>()?;
    let slices: Vec<TemporalSlice> = subsets
        .iter()
        .zip(&row_sums)
        .zip(&times)
        .map(|((g, rs), tf)| TemporalSlice {
            growth: &g.values,
            row_sums: rs,
            sigma: tf.sigma,
        })
        .collect();
    let r = match wls_temporal(&slices, q) {
        Ok(r) => r,
        Err(Error::Degenerate(m)) => {
            warnings.push(format!("temporal regression degenerate ({m}); r set to zero"));
            vec![0.0; q]
        }
        Err(e) => return Err(e),
    };
    let fit = StcarFit {
        array_size: cfg.array_size,
        spacing: cfg.spacing,
        d,
        weight_fn: cfg.weight_fn,
        q,
        kernels: cfg.kernels,
        bandwidth: cfg.bandwidth,
        active,
        times,
        r,
    };
    Ok(FitRun {
        prepared,
        fit,
        warnings,
    })
}

/// Model and baseline forecasts on the fit's arrays.
#[derive(Debug, Clone)]
pub struct ForecastSet {
    /// Layout indices, in forecast order.
    pub ids: Vec<usize>,
    /// Positions at steps `1..=p`.
    pub positions: Vec<Vec<Point>>,
    /// Whether each array's footprint is on the grid at each step.
    pub inside: Vec<Vec<bool>>,
    pub timestamps: Vec<i64>,
    pub stcar: Forecast,
    pub persistence: Forecast,
}

/// Forecast `p` steps past the last scan of `prepared` with a matching fit.
pub fn forecast_sequence(prepared: &Prepared, fit: &StcarFit, p: usize) -> Result<ForecastSet> {
    let big_t = prepared.times();
    if fit.last().t + 1 != big_t {
        return Err(Error::DimensionMismatch(format!(
            "fit ends at growth time {} but the sequence has {big_t} scans",
            fit.last().t
        )));
    }
    if fit.array_size != prepared.layout.array_size || fit.spacing != prepared.layout.spacing {
        return Err(Error::DimensionMismatch(
            "fit layout differs from the sequence layout".into(),
        ));
    }
    if let Some(&bad) = fit.active.iter().find(|&&i| i >= prepared.layout.len()) {
        return Err(Error::DimensionMismatch(format!(
            "fit array {bad} is not in the layout"
        )));
    }
    if fit.active.iter().any(|&i| !prepared.z[big_t - 1].valid[i]) {
        return Err(Error::DimensionMismatch(
            "fit arrays are not all valid in this sequence".into(),
        ));
    }
    if fit.times.len() < fit.q {
        return Err(Error::InsufficientHistory(format!(
            "fit holds {} times, order {} needs {}",
            fit.times.len(),
            fit.q,
            fit.q
        )));
    }
    let active = &fit.active;
    let init = active_positions(&prepared.track, 1, active);
    let nb = neighbour_sets(&init, fit.d)?;

    let z_prev: Vec<f64> = active.iter().map(|&i| prepared.z[big_t - 2].values[i]).collect();
    let z_last: Vec<f64> = active.iter().map(|&i| prepared.z[big_t - 1].values[i]).collect();

    // History G_{T−1}, …, G_{T−q} with their structures and ρ̂.
    let hist_data: Vec<(CarStructure, f64, Vec<f64>)> = (1..=fit.q)
        .map(|j| {
            let t = big_t - j;
            let tf = fit
                .times
                .iter()
                .find(|x| x.t == t)
                .ok_or_else(|| Error::InsufficientHistory(format!("fit has no estimates at time {t}")))?;
            let g = prepared
                .growth
                .iter()
                .find(|g| g.t == t)
                .ok_or_else(|| Error::InsufficientHistory(format!("no growth at time {t}")))?
                .subset(active);
            let pos = active_positions(&prepared.track, t, active);
            let s = structure_at(&nb, &pos, fit.d, fit.weight_fn)?;
            Ok((s, tf.rho, g.values))
        })
        .collect::<Result<Vec<_>>>()?;

    let frozen = prepared.velocities.last().expect("at least one scan pair");
    let here = TrackState::new(active_positions(&prepared.track, big_t, active));
    let ahead = translate(&here, frozen, p as i32)?;
    let future: Vec<CarStructure> = (0..p)
        .map(|m| structure_at(&nb, ahead.at(m + 1), fit.d, fit.weight_fn))
        .collect::<Result<Vec<_>>>()?;
    let last = fit.last();
    let input = ForecastInput {
        z_prev: &z_prev,
        z_last: &z_last,
        history: hist_data
            .iter()
            .map(|(s, rho, g)| HistoryTerm {
                structure: s,
                rho: *rho,
                growth: g,
            })
            .collect(),
        future: &future,
        params: CarParams {
            rho: last.rho,
            sigma: last.sigma,
        },
        r: &fit.r,
    };
    let stcar = forecast_reflectivity(&input, p)?;
    let persistence = persistence_baseline(&z_last, p);
    let positions: Vec<Vec<Point>> = (2..=p + 1).map(|k| ahead.at(k).to_vec()).collect();
    let inside = positions
        .iter()
        .map(|pos| footprint_inside(&prepared.grid, pos, fit.array_size))
        .collect();
    Ok(ForecastSet {
        ids: active.clone(),
        positions,
        inside,
        timestamps: (1..=p as i64)
            .map(|m| prepared.base_timestamp + m * prepared.time_step)
            .collect(),
        stcar,
        persistence,
    })
}

/// Raster of array predictions: each pixel averages the (non-negative)
/// values of every array footprint covering it; uncovered pixels are missing.
pub fn splat(
    grid: &GridSpec,
    positions: &[Point],
    values: &[f64],
    array_size: usize,
    timestamp: i64,
) -> Result<ReflectivityField> {
    let half = (array_size / 2) as f64;
    let mut sum = vec![0.0; grid.len()];
    let mut count = vec![0usize; grid.len()];
    for (p, &v) in positions.iter().zip(values) {
        if !v.is_finite() {
            continue;
        }
        let (c, r) = grid.to_pixel(*p);
        let c0 = (c - half).ceil().max(0.0) as i64;
        let c1 = (c + half).floor().min(grid.width as f64 - 1.0) as i64;
        let r0 = (r - half).ceil().max(0.0) as i64;
        let r1 = (r + half).floor().min(grid.height as f64 - 1.0) as i64;
        for row in r0..=r1 {
            for col in c0..=c1 {
                let k = row as usize * grid.width + col as usize;
                sum[k] += v.max(0.0);
                count[k] += 1;
            }
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { MISSING })
        .collect();
    ReflectivityField::new(*grid, timestamp, values)
}

/// One row of the per-array forecast table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub method: String,
    pub step: usize,
    pub timestamp: i64,
    pub array_id: usize,
    pub x_km: f64,
    pub y_km: f64,
    pub z_dbz: f64,
    pub variance: f64,
    pub valid: bool,
}

/// Flatten a forecast set into table rows; dBZ values are clamped at 0.
pub fn forecast_rows(set: &ForecastSet) -> Vec<ForecastRow> {
    let mut rows = Vec::new();
    for fc in [&set.stcar, &set.persistence] {
        for m in 0..fc.horizon() {
            for (k, &id) in set.ids.iter().enumerate() {
                rows.push(ForecastRow {
                    method: fc.method.name().to_string(),
                    step: m + 1,
                    timestamp: set.timestamps[m],
                    array_id: id,
                    x_km: set.positions[m][k][0],
                    y_km: set.positions[m][k][1],
                    z_dbz: fc.values[m][k].max(0.0),
                    variance: fc.variance[m][k],
                    valid: set.inside[m][k],
                });
            }
        }
    }
    rows
}

pub fn write_forecast_rows(rows: &[ForecastRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_forecast_rows(path: &Path) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}

/// Write `<method>_<step>.radar` rasters and `forecast_variance.csv`.
pub fn write_forecast(
    set: &ForecastSet,
    grid: &GridSpec,
    array_size: usize,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let base = set.timestamps[0] - (set.timestamps.get(1).map_or(0, |t| t - set.timestamps[0]));
    let mut written = Vec::new();
    for fc in [&set.stcar, &set.persistence] {
        for m in 0..fc.horizon() {
            let raster = splat(grid, &set.positions[m], &fc.values[m], array_size, set.timestamps[m])?;
            let path = dir.join(format!("{}_{:02}.radar", fc.method.name(), m + 1));
            let trailer = format!("FORECAST method={} base={} step={}", fc.method.name(), base, m + 1);
            write_field_annotated(&raster, &path, &trailer)?;
            written.push(path);
        }
    }
    let csv = dir.join("forecast_variance.csv");
    write_forecast_rows(&forecast_rows(set), &csv)?;
    written.push(csv);
    Ok(written)
}

const FIT_MAGIC: &str = "STCARFIT v1";

/// Text form of a fit. Floats use the shortest round-trip representation.
pub fn format_fit(fit: &StcarFit) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{FIT_MAGIC}");
    let _ = writeln!(s, "array_size = {}", fit.array_size);
    let _ = writeln!(s, "spacing = {}", fit.spacing);
    let _ = writeln!(s, "d = {}", fit.d);
    let _ = writeln!(s, "weight_fn = {}", fit.weight_fn.name());
    let _ = writeln!(s, "q = {}", fit.q);
    let _ = writeln!(s, "J = {}", fit.kernels);
    let _ = writeln!(s, "bandwidth = {}", fit.bandwidth);
    let ids: Vec<String> = fit.active.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(s, "active = {}", ids.join(" "));
    for tf in &fit.times {
        let _ = writeln!(s, "[time {}]", tf.t);
        let _ = writeln!(s, "gamma = {}", format_list(&tf.gamma));
        let flat: Vec<f64> = tf.centers.iter().flat_map(|c| [c[0], c[1]]).collect();
        let _ = writeln!(s, "centers = {}", format_list(&flat));
        let _ = writeln!(s, "rho = {}", tf.rho);
        let _ = writeln!(s, "sigma = {}", tf.sigma);
        let _ = writeln!(s, "loglik = {}", tf.loglik);
        let _ = writeln!(s, "iterations = {}", tf.iterations);
        let _ = writeln!(s, "converged = {}", tf.converged);
        let _ = writeln!(s, "[end]");
    }
    let _ = writeln!(s, "r = {}", format_list(&fit.r));
    s
}

pub fn parse_fit(text: &str, path: &Path) -> Result<StcarFit> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l == FIT_MAGIC => {}
        _ => return Err(Error::parse(path, format!("missing {FIT_MAGIC:?} header"))),
    }
    let err = |line: usize, msg: String| Error::parse(path, format!("line {line}: {msg}"));
    let kv = |line: usize, l: &str| -> Result<(String, String)> {
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| err(line, "expected key = value".into()))?;
        Ok((k.trim().to_string(), v.trim().to_string()))
    };
    fn num<T: std::str::FromStr>(v: &str, key: &str, line: usize, path: &Path) -> Result<T> {
        v.parse()
            .map_err(|_| Error::parse(path, format!("line {line}: bad {key} {v:?}")))
    }
    let list = |v: &str, key: &str, line: usize| -> Result<Vec<f64>> {
        parse_list(v).map_err(|_| err(line, format!("bad {key} list")))
    };

    let mut header = std::collections::BTreeMap::new();
    let mut times = Vec::new();
    let mut r: Option<Vec<f64>> = None;
    while let Some((line, l)) = lines.next() {
        if let Some(rest) = l.strip_prefix("[time ").and_then(|x| x.strip_suffix(']')) {
            let t: usize = num(rest.trim(), "time", line, path)?;
            let mut block = std::collections::BTreeMap::new();
            loop {
                let Some((bl, b)) = lines.next() else {
                    return Err(err(line, format!("time block {t} is not closed")));
                };
                if b == "[end]" {
                    break;
                }
                let (k, v) = kv(bl, b)?;
                if block.insert(k.clone(), (bl, v)).is_some() {
                    return Err(err(bl, format!("duplicate key {k:?}")));
                }
            }
            let mut get = |k: &str| {
                block
                    .remove(k)
                    .ok_or_else(|| err(line, format!("time block {t} lacks {k}")))
            };
            let (gl, gamma) = get("gamma")?;
            let (cl, centers) = get("centers")?;
            let (rl, rho) = get("rho")?;
            let (sl, sigma) = get("sigma")?;
            let (ll, loglik) = get("loglik")?;
            let (il, iterations) = get("iterations")?;
            let (vl, converged) = get("converged")?;
            if let Some((k, (bl, _))) = block.into_iter().next() {
                return Err(err(bl, format!("unknown key {k:?}")));
            }
            let flat = list(&centers, "centers", cl)?;
            if flat.len() % 2 != 0 {
                return Err(err(cl, "centers need x y pairs".into()));
            }
            times.push(TimeFit {
                t,
                gamma: list(&gamma, "gamma", gl)?,
                centers: flat.chunks(2).map(|c| [c[0], c[1]]).collect(),
                rho: num(&rho, "rho", rl, path)?,
                sigma: num(&sigma, "sigma", sl, path)?,
                loglik: num(&loglik, "loglik", ll, path)?,
                iterations: num(&iterations, "iterations", il, path)?,
                converged: num(&converged, "converged", vl, path)?,
            });
            continue;
        }
        let (k, v) = kv(line, l)?;
        if k == "r" {
            r = Some(list(&v, "r", line)?);
        } else if header.insert(k.clone(), (line, v)).is_some() {
            return Err(err(line, format!("duplicate key {k:?}")));
        }
    }
    let mut get = |k: &str| {
        header
            .remove(k)
            .ok_or_else(|| Error::parse(path, format!("missing {k}")))
    };
    let (l1, array_size) = get("array_size")?;
    let (l2, spacing) = get("spacing")?;
    let (l3, d) = get("d")?;
    let (l4, wf) = get("weight_fn")?;
    let (l5, q) = get("q")?;
    let (l6, j) = get("J")?;
    let (l7, bandwidth) = get("bandwidth")?;
    let (l8, active) = get("active")?;
    if let Some((k, (line, _))) = header.into_iter().next() {
        return Err(err(line, format!("unknown key {k:?}")));
    }
    let active = active
        .split_whitespace()
        .map(|x| num::<usize>(x, "active index", l8, path))
        .collect::<Result<Vec<_>>>()?;
    let fit = StcarFit {
        array_size: num(&array_size, "array_size", l1, path)?,
        spacing: num(&spacing, "spacing", l2, path)?,
        d: num(&d, "d", l3, path)?,
        weight_fn: WeightFn::parse(&wf).ok_or_else(|| err(l4, format!("unknown weight_fn {wf:?}")))?,
        q: num(&q, "q", l5, path)?,
        kernels: num(&j, "J", l6, path)?,
        bandwidth: num(&bandwidth, "bandwidth", l7, path)?,
        active,
        times,
        r: r.ok_or_else(|| Error::parse(path, "missing r line"))?,
    };
    if fit.times.is_empty() {
        return Err(Error::parse(path, "no time blocks"));
    }
    if fit.r.len() != fit.q {
        return Err(Error::parse(
            path,
            format!("r has {} coefficients but q = {}", fit.r.len(), fit.q),
        ));
    }
    for tf in &fit.times {
        if tf.gamma.len() != 3 * fit.kernels || tf.centers.len() != fit.kernels {
            return Err(Error::parse(
                path,
                format!("time {} does not match J = {}", tf.t, fit.kernels),
            ));
        }
    }
    Ok(fit)
}

pub fn write_fit(fit: &StcarFit, path: &Path) -> Result<()> {
    write_atomic(path, format_fit(fit).as_bytes())
}

pub fn read_fit(path: &Path) -> Result<StcarFit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fit(&text, path)
}
