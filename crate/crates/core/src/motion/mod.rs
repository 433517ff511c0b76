//! Storm motion: TREC correlation tracking, variational smoothing under a
//! mass-continuity penalty, and the translation operators built on the
//! smoothed field.

mod smooth;
mod translate;
mod trec;

pub use smooth::{divergence, divergence_penalty, smooth_velocity};
pub use translate::{translate, translate_with};
pub use trec::trec;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ArrayLayout, GridSpec, Point};

/// Parameters for tracking and smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionConfig {
    /// Half-width of the square lag window, in pixels.
    pub search_radius: usize,
    pub min_valid_correlation: f64,
    /// Minimum source-patch variance (dBZ²) for a vector to be trusted.
    pub min_patch_variance: f64,
    /// Weight of the squared-divergence penalty (lattice units).
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Patches with at least this fraction of missing cells are rejected.
    pub max_missing_fraction: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            search_radius: 6,
            min_valid_correlation: 0.5,
            min_patch_variance: 1.0,
            lambda: 1.0,
            tolerance: 1e-10,
            max_iterations: 20_000,
            max_missing_fraction: 0.2,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.search_radius < 1 {
            return Err(Error::Config("search_radius: must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.min_valid_correlation) {
            return Err(Error::Config("min_valid_correlation: must lie in [-1, 1]".into()));
        }
        if !(self.min_patch_variance >= 0.0) {
            return Err(Error::Config("min_patch_variance: must be >= 0".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda: must be >= 0, got {}", self.lambda)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("cg_tolerance: must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("cg_max_iterations: must be >= 1".into()));
        }
        if !(self.max_missing_fraction > 0.0 && self.max_missing_fraction <= 1.0) {
            return Err(Error::Config("max_missing_fraction: must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-array motion vectors on the array lattice, in km per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub rows: usize,
    pub cols: usize,
    /// Map position of lattice node (0, 0).
    pub origin: Point,
    pub spacing_km: f64,
    pub raw: Vec<[f64; 2]>,
    pub smooth: Vec<[f64; 2]>,
    pub corr: Vec<f64>,
    pub valid: Vec<bool>,
}

impl VelocityField {
    /// A field with identical raw and smoothed vectors at every node.
    pub fn from_vectors(layout: &ArrayLayout, grid: &GridSpec, vectors: Vec<[f64; 2]>) -> Result<Self> {
        if vectors.len() != layout.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} vectors for {} arrays",
                vectors.len(),
                layout.len()
            )));
        }
        if layout.is_empty() {
            return Err(Error::InvalidInput("empty layout".into()));
        }
        Ok(VelocityField {
            rows: layout.rows,
            cols: layout.cols,
            origin: layout.center_km(0, grid),
            spacing_km: layout.spacing_km(grid),
            raw: vectors.clone(),
            smooth: vectors,
            corr: vec![1.0; layout.len()],
            valid: vec![true; layout.len()],
        })
    }

    pub fn uniform(layout: &ArrayLayout, grid: &GridSpec, u: f64, v: f64) -> Result<Self> {
        Self::from_vectors(layout, grid, vec![[u, v]; layout.len()])
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn node_km(&self, i: usize) -> Point {
        let (r, c) = (i / self.cols, i % self.cols);
        [
            self.origin[0] + c as f64 * self.spacing_km,
            self.origin[1] + r as f64 * self.spacing_km,
        ]
    }

    /// Smoothed velocity at an arbitrary point: bilinear on the lattice,
    /// constant beyond its edge.
    pub fn at(&self, p: Point) -> [f64; 2] {
        let fc = ((p[0] - self.origin[0]) / self.spacing_km).clamp(0.0, (self.cols - 1) as f64);
        let fr = ((p[1] - self.origin[1]) / self.spacing_km).clamp(0.0, (self.rows - 1) as f64);
        let c0 = (fc.floor() as usize).min(self.cols.saturating_sub(2));
        let r0 = (fr.floor() as usize).min(self.rows.saturating_sub(2));
        let c1 = (c0 + 1).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let wc = fc - c0 as f64;
        let wr = fr - r0 as f64;
        let mut out = [0.0; 2];
        for (r, c, w) in [
            (r0, c0, (1.0 - wc) * (1.0 - wr)),
            (r0, c1, wc * (1.0 - wr)),
            (r1, c0, (1.0 - wc) * wr),
            (r1, c1, wc * wr),
        ] {
            if w != 0.0 {
                let s = self.smooth[r * self.cols + c];
                out[0] += w * s[0];
                out[1] += w * s[1];
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VelocityRow {
    array_id: usize,
    x_km: f64,
    y_km: f64,
    u_raw: f64,
    v_raw: f64,
    u_smooth: f64,
    v_smooth: f64,
    corr: f64,
    valid: bool,
}

/// Write the per-array velocity table.
pub fn write_velocity_csv(field: &VelocityField, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..field.len() {
        let p = field.node_km(i);
        w.serialize(VelocityRow {
            array_id: i,
            x_km: p[0],
            y_km: p[1],
            u_raw: field.raw[i][0],
            v_raw: field.raw[i][1],
            u_smooth: field.smooth[i][0],
            v_smooth: field.smooth[i][1],
            corr: field.corr[i],
            valid: field.valid[i],
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    crate::raster::write_atomic(path, &bytes)
}

/// Read back `(raw, smooth, corr, valid)` columns in array order.
pub fn read_velocity_csv(path: &Path) -> Result<Vec<([f64; 2], [f64; 2], f64, bool)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<VelocityRow>()
        .map(|row| {
            let row = row?;
            Ok((
                [row.u_raw, row.v_raw],
                [row.u_smooth, row.v_smooth],
                row.corr,
                row.valid,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::build_layout;

    #[test]
    fn interpolation_is_exact_for_linear_fields() {
        let grid = GridSpec::new(64, 64, 0.0, 0.0, 0.5).unwrap();
        let layout = build_layout(64, 64, 9, 4).unwrap();
        let vecs = layout
            .centers_km(&grid)
            .iter()
            .map(|p| [0.1 * p[0] - 0.2 * p[1], 0.05 * p[1] + 1.0])
            .collect();
        let f = VelocityField::from_vectors(&layout, &grid, vecs).unwrap();
        for p in [[7.3, 9.9], [15.0, 12.25], [20.1, 3.3]] {
            let v = f.at(p);
            assert!((v[0] - (0.1 * p[0] - 0.2 * p[1])).abs() < 1e-12);
            assert!((v[1] - (0.05 * p[1] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn config_rejects_negative_lambda() {
        let cfg = MotionConfig {
            lambda: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn velocity_csv_roundtrip() {
        let grid = GridSpec::new(32, 32, 0.0, 0.0, 0.5).unwrap();
        let layout = build_layout(32, 32, 9, 6).unwrap();
        let mut f = VelocityField::uniform(&layout, &grid, 0.5, -1.0).unwrap();
        f.valid[1] = false;
        f.corr[2] = 0.25;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        write_velocity_csv(&f, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("array_id,x_km,y_km,u_raw,v_raw,u_smooth,v_smooth,corr,valid"));
        let rows = read_velocity_csv(&path).unwrap();
        assert_eq!(rows.len(), f.len());
        assert!(!rows[1].3);
        assert_eq!(rows[2].2, 0.25);
        assert_eq!(rows[0].1, [0.5, -1.0]);
    }
}
