//! Lagrangian bookkeeping: per-array reflectivity along trajectories and the
//! growth/decay field extracted from the centred two-step difference
//! `Z_{t+1} = Z_{t-1} + 2 G_t`.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{extract_patch, GridSpec, Point, ReflectivityField};

/// One scalar per array with a validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayValues {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ArrayValues {
    pub fn new(values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != valid.len() {
            return Err(Error::DimensionMismatch("values and flags differ in length".into()));
        }
        Ok(ArrayValues { values, valid })
    }

    pub fn all_valid(values: Vec<f64>) -> Self {
        let valid = vec![true; values.len()];
        ArrayValues { values, valid }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn subset(&self, keep: &[usize]) -> ArrayValues {
        ArrayValues {
            values: keep.iter().map(|&i| self.values[i]).collect(),
            valid: keep.iter().map(|&i| self.valid[i]).collect(),
        }
    }
}

/// Growth/decay per array at time `t`, in dBZ per step.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthField {
    pub t: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl GrowthField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn subset(&self, keep: &[usize]) -> GrowthField {
        GrowthField {
            t: self.t,
            values: keep.iter().map(|&i| self.values[i]).collect(),
            valid: keep.iter().map(|&i| self.valid[i]).collect(),
        }
    }
}

/// Mean reflectivity of each array's patch (bilinear sampling, missing cells
/// read as 0 dBZ). Arrays off the grid or with at least `max_missing` of
/// their patch missing are flagged invalid.
pub fn sample_reflectivity(
    field: &ReflectivityField,
    positions: &[Point],
    array_size: usize,
    max_missing: f64,
) -> ArrayValues {
    let (values, valid) = positions
        .iter()
        .map(|&p| match extract_patch(field, p, array_size) {
            Ok(patch) if patch.missing_fraction() < max_missing => (patch.filled_mean(), true),
            _ => (f64::NAN, false),
        })
        .unzip();
    ArrayValues { values, valid }
}

/// Whether each array's whole footprint lies on the grid.
pub fn footprint_inside(grid: &GridSpec, positions: &[Point], array_size: usize) -> Vec<bool> {
    let half = (array_size / 2) as f64;
    let eps = 1e-9;
    positions
        .iter()
        .map(|&p| {
            let (c, r) = grid.to_pixel(p);
            c - half > -eps
                && r - half > -eps
                && c + half < grid.width as f64 - 1.0 + eps
                && r + half < grid.height as f64 - 1.0 + eps
        })
        .collect()
}

/// `G_t = (Z(x_{t+1}) − Z(x_{t−1})) / 2` along each trajectory.
pub fn growth_from_scans(z_prev: &ArrayValues, z_next: &ArrayValues, t: usize) -> Result<GrowthField> {
    if z_prev.len() != z_next.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} arrays at t-1 but {} at t+1",
            z_prev.len(),
            z_next.len()
        )));
    }
    let (values, valid) = (0..z_prev.len())
        .map(|i| {
            let ok = z_prev.valid[i] && z_next.valid[i];
            let g = if ok {
                (z_next.values[i] - z_prev.values[i]) / 2.0
            } else {
                f64::NAN
            };
            (g, ok)
        })
        .unzip();
    Ok(GrowthField { t, values, valid })
}

/// `Z_{t+1} = Z_{t−1} + 2 G_t` along each trajectory.
pub fn advance_reflectivity(z_prev: &ArrayValues, growth: &GrowthField) -> Result<ArrayValues> {
    if z_prev.len() != growth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} arrays but {} growth values",
            z_prev.len(),
            growth.len()
        )));
    }
    let (values, valid) = (0..z_prev.len())
        .map(|i| {
            let ok = z_prev.valid[i] && growth.valid[i];
            (
                if ok {
                    z_prev.values[i] + 2.0 * growth.values[i]
                } else {
                    f64::NAN
                },
                ok,
            )
        })
        .unzip();
    Ok(ArrayValues { values, valid })
}

#[derive(Serialize)]
struct GrowthRow {
    array_id: usize,
    t: usize,
    x_km: f64,
    y_km: f64,
    growth_dbz: f64,
    valid: bool,
}

/// Write growth fields as `array_id, t, x_km, y_km, growth_dbz, valid`.
///
/// `positions[k]` holds the array positions at `fields[k].t`; `ids` maps
/// row order to array ids.
pub fn write_growth_csv(fields: &[GrowthField], positions: &[&[Point]], ids: &[usize], path: &Path) -> Result<()> {
    if fields.len() != positions.len() {
        return Err(Error::DimensionMismatch(
            "one position set per growth field required".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (g, pos) in fields.iter().zip(positions) {
        for (k, &id) in ids.iter().enumerate() {
            w.serialize(GrowthRow {
                array_id: id,
                t: g.t,
                x_km: pos[k][0],
                y_km: pos[k][1],
                growth_dbz: g.values[k],
                valid: g.valid[k],
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    crate::raster::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridSpec;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn constant_field_samples_constant() {
        let f = ReflectivityField::constant(grid(40, 40), 0, 20.0).unwrap();
        let z = sample_reflectivity(&f, &[[10.0, 10.0], [20.5, 13.25]], 19, 0.2);
        assert!(z.valid.iter().all(|&v| v));
        assert!(z.values.iter().all(|&v| (v - 20.0).abs() < 1e-12));
    }

    #[test]
    fn step_edge_mean_matches_enumeration() {
        // Left half 0 dBZ, right half 40 dBZ; edge between columns 19 and 20.
        let f = ReflectivityField::from_fn(grid(40, 40), 0, |c, _| if c < 20 { 0.0 } else { 40.0 }).unwrap();
        let center = [17.0, 20.0];
        let mut sum = 0.0;
        for _row in 11..=29usize {
            for c in 8..=26usize {
                sum += if c < 20 { 0.0 } else { 40.0 };
            }
        }
        let expect = sum / 361.0;
        let z = sample_reflectivity(&f, &[center], 19, 0.2);
        assert!((z.values[0] - expect).abs() < 1e-12);
        assert!((expect - 40.0 * 7.0 / 19.0).abs() < 1e-12);
    }

    #[test]
    fn off_grid_arrays_are_invalid() {
        let f = ReflectivityField::constant(grid(40, 40), 0, 20.0).unwrap();
        let z = sample_reflectivity(&f, &[[-30.0, 5.0], [39.0, 39.0]], 9, 0.2);
        assert_eq!(z.valid, vec![false, false]);
        let inside = footprint_inside(&f.grid, &[[4.0, 4.0], [3.9, 4.0], [35.0, 35.0], [35.1, 20.0]], 9);
        assert_eq!(inside, vec![true, false, true, false]);
    }

    #[test]
    fn persistent_level_has_zero_growth() {
        let z = ArrayValues::all_valid(vec![10.0, 30.0, 45.5]);
        let g = growth_from_scans(&z, &z, 2).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_increase_halves() {
        let a = ArrayValues::all_valid(vec![10.0, 30.0]);
        let b = ArrayValues::all_valid(vec![16.0, 36.0]);
        let g = growth_from_scans(&a, &b, 3).unwrap();
        assert_eq!(g.values, vec![3.0, 3.0]);
    }

    #[test]
    fn advance_arithmetic_and_persistence() {
        let z = ArrayValues::all_valid(vec![30.0]);
        let g = GrowthField {
            t: 2,
            values: vec![-2.5],
            valid: vec![true],
        };
        assert_eq!(advance_reflectivity(&z, &g).unwrap().values, vec![25.0]);
        let zero = GrowthField {
            t: 2,
            values: vec![0.0],
            valid: vec![true],
        };
        assert_eq!(advance_reflectivity(&z, &zero).unwrap(), z);
    }

    #[test]
    fn length_mismatch_errors() {
        let a = ArrayValues::all_valid(vec![1.0]);
        let b = ArrayValues::all_valid(vec![1.0, 2.0]);
        assert!(growth_from_scans(&a, &b, 2).is_err());
        let g = growth_from_scans(&b, &b, 2).unwrap();
        assert!(advance_reflectivity(&a, &g).is_err());
    }

    #[test]
    fn invalid_endpoint_invalidates_growth() {
        let a = ArrayValues::new(vec![1.0, 2.0], vec![true, false]).unwrap();
        let b = ArrayValues::all_valid(vec![3.0, 4.0]);
        let g = growth_from_scans(&a, &b, 2).unwrap();
        assert_eq!(g.valid, vec![true, false]);
    }

    proptest! {
        #[test]
        fn advance_inverts_growth(prev in proptest::collection::vec(-10.0f64..70.0, 1..20),
                                  shift in -20.0f64..20.0) {
            let z_prev = ArrayValues::all_valid(prev.clone());
            let g = GrowthField { t: 2, values: vec![shift / 2.0; prev.len()], valid: vec![true; prev.len()] };
            let z_next = advance_reflectivity(&z_prev, &g).unwrap();
            let back = growth_from_scans(&z_prev, &z_next, 2).unwrap();
            for (a, b) in back.values.iter().zip(&g.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let again = advance_reflectivity(&z_prev, &back).unwrap();
            for (a, b) in again.values.iter().zip(&z_next.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
