//! Reflectivity rasters, the pixel-array layout and array trajectories.
//!
//! Map coordinates are kilometres on a flat plane: pixel `(col, row)` sits at
//! `x = x0 + col * cell`, `y = y0 + row * cell`. Rows therefore increase
//! along +y ("north" in the synthetic scenes).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A point in map coordinates (km).
pub type Point = [f64; 2];

/// Marker stored for missing / no-echo cells.
pub const MISSING: f64 = f64::NAN;

const SNAP: f64 = 1e-9;

/// Geometry shared by every scan of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub x0: f64,
    pub y0: f64,
    pub cell_size: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, x0: f64, y0: f64, cell_size: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("grid must be non-empty".into()));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidInput(format!("cell_size must be > 0, got {cell_size}")));
        }
        if !x0.is_finite() || !y0.is_finite() {
            return Err(Error::InvalidInput("grid origin must be finite".into()));
        }
        Ok(GridSpec {
            width,
            height,
            x0,
            y0,
            cell_size,
        })
    }

    /// Fractional pixel coordinates `(col, row)` of a map point.
    pub fn to_pixel(&self, p: Point) -> (f64, f64) {
        (
            snap((p[0] - self.x0) / self.cell_size),
            snap((p[1] - self.y0) / self.cell_size),
        )
    }

    pub fn to_km(&self, col: f64, row: f64) -> Point {
        [self.x0 + col * self.cell_size, self.y0 + row * self.cell_size]
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// One timestamped scan of reflectivity in dBZ, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivityField {
    pub grid: GridSpec,
    pub timestamp: i64,
    values: Vec<f64>,
}

impl ReflectivityField {
    pub fn new(grid: GridSpec, timestamp: i64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.width,
                grid.height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| v.is_infinite()) {
            return Err(Error::InvalidInput(format!("non-finite value at cell {i}")));
        }
        Ok(ReflectivityField {
            grid,
            timestamp,
            values,
        })
    }

    pub fn from_fn(grid: GridSpec, timestamp: i64, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for row in 0..grid.height {
            for col in 0..grid.width {
                values.push(f(col, row));
            }
        }
        Self::new(grid, timestamp, values)
    }

    pub fn constant(grid: GridSpec, timestamp: i64, value: f64) -> Result<Self> {
        Self::new(grid, timestamp, vec![value; grid.len()])
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Raw cell value; `NaN` marks missing.
    #[inline]
    pub fn raw(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.grid.width + col]
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.raw(col, row);
        (!v.is_nan()).then_some(v)
    }

    pub fn is_missing(&self, col: usize, row: usize) -> bool {
        self.raw(col, row).is_nan()
    }

    /// Bilinear sample at fractional pixel coordinates.
    ///
    /// Returns `None` when the point is off-grid or any corner carrying
    /// non-zero weight is missing.
    pub fn sample_pixel(&self, col: f64, row: f64) -> Option<f64> {
        let (w, h) = (self.grid.width as f64, self.grid.height as f64);
        if !(col > -SNAP && row > -SNAP && col < w - 1.0 + SNAP && row < h - 1.0 + SNAP) {
            return None;
        }
        let c0 = (col.floor().max(0.0) as usize).min(self.grid.width - 1);
        let r0 = (row.floor().max(0.0) as usize).min(self.grid.height - 1);
        let fc = (col - c0 as f64).clamp(0.0, 1.0);
        let fr = (row - r0 as f64).clamp(0.0, 1.0);
        let mut acc = 0.0;
        for (dc, wc) in [(0usize, 1.0 - fc), (1, fc)] {
            if wc == 0.0 {
                continue;
            }
            for (dr, wr) in [(0usize, 1.0 - fr), (1, fr)] {
                if wr == 0.0 {
                    continue;
                }
                let v = self.get(c0 + dc, r0 + dr)?;
                acc += wc * wr * v;
            }
        }
        Some(acc)
    }

    /// Bilinear sample at a map point.
    pub fn sample(&self, p: Point) -> Option<f64> {
        let (c, r) = self.grid.to_pixel(p);
        self.sample_pixel(c, r)
    }
}

/// A square window of reflectivity values around an array centre.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    /// Row-major values; `NaN` for missing or off-grid cells.
    pub values: Vec<f64>,
    /// Number of cells that fell outside the grid.
    pub outside: usize,
}

impl Patch {
    pub fn missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.missing() as f64 / self.values.len() as f64
    }

    pub fn outside_fraction(&self) -> f64 {
        self.outside as f64 / self.values.len() as f64
    }

    /// Values with missing cells replaced by 0 dBZ.
    pub fn filled(&self) -> Vec<f64> {
        self.values.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect()
    }

    pub fn filled_mean(&self) -> f64 {
        self.filled().iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Extract the `array_size × array_size` patch centred at `center`.
pub fn extract_patch(field: &ReflectivityField, center: Point, array_size: usize) -> Result<Patch> {
    if array_size == 0 || array_size % 2 == 0 {
        return Err(Error::InvalidInput(format!("array_size must be odd, got {array_size}")));
    }
    let half = (array_size / 2) as f64;
    let (cc, cr) = field.grid.to_pixel(center);
    let (w, h) = (field.grid.width as f64, field.grid.height as f64);
    if cc + half < -SNAP || cr + half < -SNAP || cc - half > w - 1.0 + SNAP || cr - half > h - 1.0 + SNAP {
        return Err(Error::InvalidInput(format!(
            "patch centred at ({:.3}, {:.3}) km does not intersect the grid",
            center[0], center[1]
        )));
    }
    let mut values = Vec::with_capacity(array_size * array_size);
    let mut outside = 0;
    for k2 in 0..array_size {
        let row = cr - half + k2 as f64;
        for k1 in 0..array_size {
            let col = cc - half + k1 as f64;
            let inside = col > -SNAP && row > -SNAP && col < w - 1.0 + SNAP && row < h - 1.0 + SNAP;
            if !inside {
                outside += 1;
                values.push(MISSING);
            } else {
                values.push(field.sample_pixel(col, row).unwrap_or(MISSING));
            }
        }
    }
    Ok(Patch {
        size: array_size,
        values,
        outside,
    })
}

/// Regular lattice of overlapping pixel arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayLayout {
    pub array_size: usize,
    pub spacing: usize,
    pub rows: usize,
    pub cols: usize,
    /// Pixel `(col, row)` of each array centre, row-major over the lattice.
    pub centers_px: Vec<(usize, usize)>,
}

impl ArrayLayout {
    pub fn len(&self) -> usize {
        self.centers_px.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers_px.is_empty()
    }

    pub fn index(&self, lattice_row: usize, lattice_col: usize) -> usize {
        lattice_row * self.cols + lattice_col
    }

    pub fn center_km(&self, i: usize, grid: &GridSpec) -> Point {
        let (c, r) = self.centers_px[i];
        grid.to_km(c as f64, r as f64)
    }

    pub fn centers_km(&self, grid: &GridSpec) -> Vec<Point> {
        (0..self.len()).map(|i| self.center_km(i, grid)).collect()
    }

    pub fn spacing_km(&self, grid: &GridSpec) -> f64 {
        self.spacing as f64 * grid.cell_size
    }

    pub fn half(&self) -> usize {
        self.array_size / 2
    }
}

/// Maximal centred lattice of array centres whose footprints fit the grid.
pub fn build_layout(width: usize, height: usize, array_size: usize, spacing: usize) -> Result<ArrayLayout> {
    if array_size < 3 || array_size % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "array_size must be odd and >= 3, got {array_size}"
        )));
    }
    if array_size > width.min(height) {
        return Err(Error::InvalidInput(format!(
            "array_size {array_size} exceeds grid {width}x{height}"
        )));
    }
    if spacing == 0 {
        return Err(Error::InvalidInput("spacing must be >= 1".into()));
    }
    let half = array_size / 2;
    let axis = |extent: usize| -> Vec<usize> {
        let span = extent - array_size; // admissible centres: half ..= half + span
        let count = span / spacing + 1;
        let start = half + (span - (count - 1) * spacing) / 2;
        (0..count).map(|k| start + k * spacing).collect()
    };
    let xs = axis(width);
    let ys = axis(height);
    let centers_px = ys.iter().flat_map(|&r| xs.iter().map(move |&c| (c, r))).collect();
    Ok(ArrayLayout {
        array_size,
        spacing,
        rows: ys.len(),
        cols: xs.len(),
        centers_px,
    })
}

/// Array-centre positions over a contiguous window of scan times.
///
/// Index 0 of `positions` is time `t = 1`, where positions equal the layout
/// centres.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    positions: Vec<Vec<Point>>,
}

impl TrackState {
    pub fn new(initial: Vec<Point>) -> Self {
        TrackState {
            positions: vec![initial],
        }
    }

    pub fn from_layout(layout: &ArrayLayout, grid: &GridSpec) -> Self {
        Self::new(layout.centers_km(grid))
    }

    /// Build from explicit per-time positions; all times must hold the same
    /// number of arrays.
    pub fn from_positions(positions: Vec<Vec<Point>>) -> Result<Self> {
        let n = positions
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("empty track".into()))?;
        if positions.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch(
                "track times hold different array counts".into(),
            ));
        }
        Ok(TrackState { positions })
    }

    /// Number of times held (the latest time index).
    pub fn times(&self) -> usize {
        self.positions.len()
    }

    pub fn arrays(&self) -> usize {
        self.positions[0].len()
    }

    /// Positions at 1-based time `t`.
    pub fn at(&self, t: usize) -> &[Point] {
        &self.positions[t - 1]
    }

    pub fn initial(&self) -> &[Point] {
        &self.positions[0]
    }

    pub fn latest(&self) -> &[Point] {
        self.positions.last().expect("track is never empty")
    }

    pub(crate) fn push(&mut self, next: Vec<Point>) {
        self.positions.push(next);
    }

    pub(crate) fn pop(&mut self) -> Option<Vec<Point>> {
        if self.positions.len() > 1 {
            self.positions.pop()
        } else {
            None
        }
    }

    pub(crate) fn set_latest(&mut self, p: Vec<Point>) {
        *self.positions.last_mut().expect("track is never empty") = p;
    }

    /// Restrict to a subset of arrays, preserving order of `keep`.
    pub fn subset(&self, keep: &[usize]) -> TrackState {
        TrackState {
            positions: self
                .positions
                .iter()
                .map(|p| keep.iter().map(|&i| p[i]).collect())
                .collect(),
        }
    }
}

const HEADER_TAG: &str = "RADAR";
const HEADER_VERSION: &str = "v1";

/// Serialise a field; `trailer` lines are appended as `# ...` comments.
pub fn format_field(field: &ReflectivityField, trailer: Option<&str>) -> String {
    let g = &field.grid;
    let mut out = String::with_capacity(g.len() * 6 + 64);
    let _ = writeln!(
        out,
        "{HEADER_TAG} {HEADER_VERSION} {} {} {} {} {} {}",
        g.width, g.height, g.x0, g.y0, g.cell_size, field.timestamp
    );
    for row in 0..g.height {
        for col in 0..g.width {
            if col > 0 {
                out.push(' ');
            }
            match field.get(col, row) {
                Some(v) => {
                    let _ = write!(out, "{v}");
                }
                None => out.push_str("NA"),
            }
        }
        out.push('\n');
    }
    if let Some(t) = trailer {
        for line in t.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out
}

/// Parse a field; returns the field and any `#` trailer text.
pub fn parse_field(text: &str, path: &Path) -> Result<(ReflectivityField, Option<String>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, "malformed header: empty file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 8 || toks[0] != HEADER_TAG || toks[1] != HEADER_VERSION {
        return Err(Error::parse(path, format!("malformed header: {header:?}")));
    }
    let num = |i: usize, what: &str| -> Result<f64> {
        toks[i]
            .parse::<f64>()
            .map_err(|_| Error::parse(path, format!("malformed header: bad {what} {:?}", toks[i])))
    };
    let width: usize = toks[2]
        .parse()
        .map_err(|_| Error::parse(path, format!("malformed header: bad width {:?}", toks[2])))?;
    let height: usize = toks[3]
        .parse()
        .map_err(|_| Error::parse(path, format!("malformed header: bad height {:?}", toks[3])))?;
    let x0 = num(4, "x0")?;
    let y0 = num(5, "y0")?;
    let cell = num(6, "cell size")?;
    let timestamp: i64 = toks[7]
        .parse()
        .map_err(|_| Error::parse(path, format!("malformed header: bad timestamp {:?}", toks[7])))?;
    let grid = GridSpec::new(width, height, x0, y0, cell).map_err(|e| Error::parse(path, e.to_string()))?;

    let mut values = Vec::with_capacity(grid.len());
    let mut trailer = Vec::new();
    let mut data_rows = 0;
    for line in lines {
        if let Some(c) = line.strip_prefix('#') {
            trailer.push(c.strip_prefix(' ').unwrap_or(c).to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !trailer.is_empty() {
            return Err(Error::parse(path, "data row after trailer"));
        }
        data_rows += 1;
        let before = values.len();
        for tok in line.split_whitespace() {
            if tok == "NA" {
                values.push(MISSING);
            } else {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, format!("row {data_rows}: bad value {tok:?}")))?;
                if !v.is_finite() {
                    // NaN tokens are accepted as the missing marker.
                    if v.is_nan() {
                        values.push(MISSING);
                        continue;
                    }
                    return Err(Error::parse(path, format!("row {data_rows}: non-finite value {tok:?}")));
                }
                values.push(v);
            }
        }
        if values.len() - before != width {
            return Err(Error::parse(
                path,
                format!(
                    "row {data_rows}: expected {width} values, got {}",
                    values.len() - before
                ),
            ));
        }
    }
    if data_rows != height {
        return Err(Error::parse(path, format!("expected {height} rows, got {data_rows}")));
    }
    let field = ReflectivityField::new(grid, timestamp, values).map_err(|e| Error::parse(path, e.to_string()))?;
    Ok((field, (!trailer.is_empty()).then(|| trailer.join("\n"))))
}

pub fn read_field(path: &Path) -> Result<ReflectivityField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_field(&text, path)?.0)
}

pub fn write_field(field: &ReflectivityField, path: &Path) -> Result<()> {
    write_atomic(path, format_field(field, None).as_bytes())
}

pub fn write_field_annotated(field: &ReflectivityField, path: &Path, trailer: &str) -> Result<()> {
    write_atomic(path, format_field(field, Some(trailer)).as_bytes())
}

/// Read an ordered scan sequence, checking geometry and timestamps.
pub fn read_sequence<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<ReflectivityField>> {
    let fields = paths
        .iter()
        .map(|p| read_field(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    check_sequence(&fields)?;
    Ok(fields)
}

/// Validate shared geometry and a strictly increasing, constant time step.
pub fn check_sequence(fields: &[ReflectivityField]) -> Result<()> {
    let Some(first) = fields.first() else {
        return Err(Error::InvalidInput("empty sequence".into()));
    };
    for (k, f) in fields.iter().enumerate().skip(1) {
        if f.grid != first.grid {
            return Err(Error::DimensionMismatch(format!(
                "scan {k} geometry {:?} differs from scan 0 {:?}",
                f.grid, first.grid
            )));
        }
        let prev = fields[k - 1].timestamp;
        if f.timestamp <= prev {
            return Err(Error::NonMonotoneTimestamps(format!(
                "scan {k} has timestamp {} after {prev}",
                f.timestamp
            )));
        }
    }
    if fields.len() > 2 {
        let step = fields[1].timestamp - fields[0].timestamp;
        if let Some(k) = (2..fields.len()).find(|&k| fields[k].timestamp - fields[k - 1].timestamp != step) {
            return Err(Error::NonMonotoneTimestamps(format!(
                "scan {k} breaks the constant time step {step}"
            )));
        }
    }
    Ok(())
}

/// Write to a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 0.0, 0.0, 0.5).unwrap()
    }

    #[test]
    fn radar_domain_layout_has_93_by_93_arrays() {
        let l = build_layout(480, 480, 19, 5).unwrap();
        assert_eq!((l.rows, l.cols), (93, 93));
        assert_eq!(l.len(), 8649);
    }

    #[test]
    fn single_footprint_sits_at_midpoint() {
        let l = build_layout(19, 19, 19, 5).unwrap();
        assert_eq!(l.centers_px, vec![(9, 9)]);
    }

    #[test]
    fn layout_count_matches_brute_force() {
        // Count centre positions p with p - 4 >= 0 and p + 4 <= 63 on a
        // stride-4 lattice anchored at the first admissible centre.
        let brute = (0..64usize)
            .filter(|p| *p >= 4 && p + 4 <= 63 && (p - 4) % 4 == 0)
            .count();
        assert_eq!(brute, 14);
        let l = build_layout(64, 64, 9, 4).unwrap();
        assert_eq!((l.rows, l.cols), (14, 14));
        assert_eq!(l.len(), 196);
    }

    #[test]
    fn layout_rejects_bad_sizes() {
        assert!(build_layout(64, 64, 8, 4).is_err());
        assert!(build_layout(10, 64, 11, 4).is_err());
        assert!(build_layout(64, 64, 9, 0).is_err());
    }

    proptest! {
        #[test]
        fn every_footprint_fits(w in 3usize..120, h in 3usize..120, half in 1usize..10, spacing in 1usize..12) {
            let size = 2 * half + 1;
            prop_assume!(size <= w.min(h));
            let l = build_layout(w, h, size, spacing).unwrap();
            prop_assert_eq!(l.len(), l.rows * l.cols);
            for &(c, r) in &l.centers_px {
                prop_assert!(c >= half && c + half < w);
                prop_assert!(r >= half && r + half < h);
            }
        }
    }

    #[test]
    fn constant_field_gives_constant_patch() {
        let f = ReflectivityField::constant(grid(30, 30), 0, 30.0).unwrap();
        let p = extract_patch(&f, [7.3, 6.1], 9).unwrap();
        assert!(p.values.iter().all(|&v| (v - 30.0).abs() < 1e-12));
    }

    #[test]
    fn integer_center_patch_is_exact_subgrid() {
        let f = ReflectivityField::from_fn(grid(20, 20), 0, |c, r| (c * 31 + r * 7) as f64 % 13.0).unwrap();
        let p = extract_patch(&f, [5.0, 4.0], 5).unwrap(); // pixel (10, 8)
        for k2 in 0..5 {
            for k1 in 0..5 {
                assert_eq!(p.values[k2 * 5 + k1], f.raw(8 + k1, 6 + k2));
            }
        }
    }

    #[test]
    fn half_pixel_offset_averages_neighbours() {
        // 3x3 ramp v = 10 * col + row; centre shifted by half a pixel in x.
        let f = ReflectivityField::from_fn(grid(4, 3), 0, |c, r| 10.0 * c as f64 + r as f64).unwrap();
        let p = extract_patch(&f, [0.75, 0.5], 3).unwrap(); // pixel (1.5, 1)
                                                            // Hand-computed bilinear weights: each sample is (v(c) + v(c+1)) / 2.
        let expect = [5.0, 15.0, 25.0, 6.0, 16.0, 26.0, 7.0, 17.0, 27.0];
        for (a, b) in p.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn patch_off_grid_is_missing_and_empty_intersection_errors() {
        let f = ReflectivityField::constant(grid(10, 10), 0, 1.0).unwrap();
        let p = extract_patch(&f, [0.0, 0.0], 5).unwrap();
        assert_eq!(p.outside, 25 - 9);
        assert!(extract_patch(&f, [-5.0, -5.0], 5).is_err());
    }

    #[test]
    fn write_then_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.radar");
        let g = GridSpec::new(4, 4, 102.5, -3.25, 0.5).unwrap();
        let mut vals: Vec<f64> = (0..16).map(|i| i as f64 * 1.1 - 3.0).collect();
        vals[6] = MISSING;
        let f = ReflectivityField::new(g, 42, vals).unwrap();
        write_field(&f, &path).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.timestamp, 42);
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn nan_token_is_missing_marker() {
        let text = "RADAR v1 4 3 0 0 1 5\n1 2 3 4\n5 6 7 NaN\n9 10 11 12\n";
        let (f, trailer) = parse_field(text, Path::new("fixture")).unwrap();
        assert!(trailer.is_none());
        assert!(f.is_missing(3, 1));
        assert_eq!(f.get(2, 1), Some(7.0));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let p = Path::new("x");
        assert!(parse_field("RADAR v2 1 1 0 0 1 0\n1\n", p).is_err());
        assert!(parse_field("RADAR v1 2 1 0 0 1 0\n1\n", p).is_err());
        assert!(parse_field("RADAR v1 1 2 0 0 1 0\n1\n", p).is_err());
        assert!(parse_field("RADAR v1 1 1 0 0 0 0\n1\n", p).is_err());
        assert!(parse_field("RADAR v1 1 1 0 0 1 0\ninf\n", p).is_err());
    }

    #[test]
    fn trailer_survives_roundtrip() {
        let f = ReflectivityField::constant(grid(2, 2), 3, 1.5).unwrap();
        let text = format_field(&f, Some("FORECAST method=stcar step=1"));
        let (back, trailer) = parse_field(&text, Path::new("t")).unwrap();
        assert_eq!(back, f);
        assert_eq!(trailer.as_deref(), Some("FORECAST method=stcar step=1"));
    }

    #[test]
    fn duplicate_timestamp_is_non_monotone() {
        let g = grid(2, 2);
        let a = ReflectivityField::constant(g, 1, 0.0).unwrap();
        let b = ReflectivityField::constant(g, 1, 0.0).unwrap();
        let err = check_sequence(&[a, b]).unwrap_err();
        assert!(err.to_string().contains("non-monotone timestamps"));
    }

    #[test]
    fn inconsistent_sequence_dimensions_are_rejected() {
        let a = ReflectivityField::constant(grid(2, 2), 1, 0.0).unwrap();
        let b = ReflectivityField::constant(grid(3, 2), 2, 0.0).unwrap();
        assert!(matches!(check_sequence(&[a, b]), Err(Error::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn io_roundtrip_is_lossless(
            vals in proptest::collection::vec(prop_oneof![4 => -30.0f64..80.0, 1 => Just(f64::NAN)], 12),
            ts in -1000i64..1000,
        ) {
            let g = GridSpec::new(4, 3, 1.25, -7.0, 0.5).unwrap();
            let f = ReflectivityField::new(g, ts, vals).unwrap();
            let (back, _) = parse_field(&format_field(&f, None), Path::new("p")).unwrap();
            prop_assert_eq!(back.grid, f.grid);
            prop_assert_eq!(back.timestamp, f.timestamp);
            for (a, b) in back.values().iter().zip(f.values()) {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }
}
