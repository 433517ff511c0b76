//! Synthetic radar scenes with known motion, growth and CAR parameters.
//!
//! Scenes are built in Lagrangian form. `ξ_t(p)` maps a pixel at time `t`
//! back to its material point at time 1, and the scan is
//! `Z_t(p) = L_t(ξ_t(p))` with `L_1 = B`, `L_2 = L_1 + g_1` and
//! `L_{t+1} = L_{t−1} + 2 g_t`, so the centred growth relation holds
//! along every trajectory by construction.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::advect::GrowthField;
use crate::error::{Error, Result};
use crate::kv::{format_list, parse_kv, Fields};
use crate::raster::{build_layout, write_field, ArrayLayout, GridSpec, Point, ReflectivityField, TrackState};
use crate::stcar::{neighbour_sets, rho_bounds, sample_stcar, CarParams, CarStructure, StcarProcess, WeightFn};

/// How material moves between scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Uniform,
    Rotational,
    Divergent,
}

/// What drives intensity change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthKind {
    Zero,
    /// Constant rate plus fixed Gaussian growth blobs.
    Constant,
    /// As `Constant`, plus a space-time CAR field on the array lattice.
    Stcar,
}

/// Scene description. Lengths are in pixels and rates per step unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub steps: usize,
    /// km per pixel.
    pub cell_size: f64,
    pub x0: f64,
    pub y0: f64,
    /// Seconds between scans.
    pub time_step: i64,
    pub seed: u64,

    pub motion: MotionKind,
    pub u: f64,
    pub v: f64,
    /// Radians per step.
    pub omega: f64,
    /// Fractional expansion per step.
    pub divergence: f64,
    /// Centre of rotation or expansion; grid centre when absent.
    pub center: Option<[f64; 2]>,
    /// Displacement bound, normally the tracking search radius.
    pub max_speed: f64,

    pub background: f64,
    pub blobs: usize,
    pub blob_amp_min: f64,
    pub blob_amp_max: f64,
    pub blob_radius_min: f64,
    pub blob_radius_max: f64,
    pub noise_amp: f64,
    pub noise_scale: f64,

    pub growth: GrowthKind,
    /// dBZ per step.
    pub growth_rate: f64,
    pub growth_blobs: usize,
    pub growth_blob_amp: f64,
    pub growth_blob_radius: f64,
    pub rho: f64,
    pub sigma: f64,
    pub r: Vec<f64>,
    pub array_size: usize,
    pub spacing: usize,
    pub burn_in: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 128,
            height: 128,
            steps: 7,
            cell_size: 0.5,
            x0: 0.0,
            y0: 0.0,
            time_step: 300,
            seed: 1,
            motion: MotionKind::Uniform,
            u: 2.0,
            v: 1.0,
            omega: 0.0,
            divergence: 0.0,
            center: None,
            max_speed: 6.0,
            background: 5.0,
            blobs: 14,
            blob_amp_min: 15.0,
            blob_amp_max: 40.0,
            blob_radius_min: 4.0,
            blob_radius_max: 14.0,
            noise_amp: 8.0,
            noise_scale: 3.0,
            growth: GrowthKind::Zero,
            growth_rate: 0.0,
            growth_blobs: 0,
            growth_blob_amp: 2.0,
            growth_blob_radius: 15.0,
            rho: 0.5,
            sigma: 1.0,
            r: vec![0.9, -0.3],
            array_size: 19,
            spacing: 5,
            burn_in: 20,
        }
    }
}

impl SceneSpec {
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut f = Fields::new(parse_kv(text, path)?);
        let d = SceneSpec::default();
        let motion = match f.take_opt("motion").as_deref() {
            None | Some("uniform") => MotionKind::Uniform,
            Some("rotational") => MotionKind::Rotational,
            Some("divergent") => MotionKind::Divergent,
            Some(other) => return Err(Error::Config(format!("motion: unknown kind {other:?}"))),
        };
        let growth = match f.take_opt("growth").as_deref() {
            None | Some("zero") => GrowthKind::Zero,
            Some("constant") => GrowthKind::Constant,
            Some("stcar") => GrowthKind::Stcar,
            Some(other) => return Err(Error::Config(format!("growth: unknown kind {other:?}"))),
        };
        let cx: Option<f64> = f
            .take_opt("center_col")
            .map(|v| v.parse())
            .transpose()
            .map_err(|_| Error::Config("center_col: cannot parse".into()))?;
        let cy: Option<f64> = f
            .take_opt("center_row")
            .map(|v| v.parse())
            .transpose()
            .map_err(|_| Error::Config("center_row: cannot parse".into()))?;
        let center = match (cx, cy) {
            (Some(a), Some(b)) => Some([a, b]),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "center_col: center_col and center_row go together".into(),
                ))
            }
        };
        let spec = SceneSpec {
            width: f.take("width", d.width)?,
            height: f.take("height", d.height)?,
            steps: f.take("steps", d.steps)?,
            cell_size: f.take("cell_size", d.cell_size)?,
            x0: f.take("x0", d.x0)?,
            y0: f.take("y0", d.y0)?,
            time_step: f.take("time_step", d.time_step)?,
            seed: f.take("seed", d.seed)?,
            motion,
            u: f.take("u", d.u)?,
            v: f.take("v", d.v)?,
            omega: f.take("omega", d.omega)?,
            divergence: f.take("divergence", d.divergence)?,
            center,
            max_speed: f.take("max_speed", d.max_speed)?,
            background: f.take("background", d.background)?,
            blobs: f.take("blobs", d.blobs)?,
            blob_amp_min: f.take("blob_amp_min", d.blob_amp_min)?,
            blob_amp_max: f.take("blob_amp_max", d.blob_amp_max)?,
            blob_radius_min: f.take("blob_radius_min", d.blob_radius_min)?,
            blob_radius_max: f.take("blob_radius_max", d.blob_radius_max)?,
            noise_amp: f.take("noise_amp", d.noise_amp)?,
            noise_scale: f.take("noise_scale", d.noise_scale)?,
            growth,
            growth_rate: f.take("growth_rate", d.growth_rate)?,
            growth_blobs: f.take("growth_blobs", d.growth_blobs)?,
            growth_blob_amp: f.take("growth_blob_amp", d.growth_blob_amp)?,
            growth_blob_radius: f.take("growth_blob_radius", d.growth_blob_radius)?,
            rho: f.take("rho", d.rho)?,
            sigma: f.take("sigma", d.sigma)?,
            r: f.take_list("r", d.r.clone())?,
            array_size: f.take("array_size", d.array_size)?,
            spacing: f.take("spacing", d.spacing)?,
            burn_in: f.take("burn_in", d.burn_in)?,
        };
        f.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let motion = match self.motion {
            MotionKind::Uniform => "uniform",
            MotionKind::Rotational => "rotational",
            MotionKind::Divergent => "divergent",
        };
        let growth = match self.growth {
            GrowthKind::Zero => "zero",
            GrowthKind::Constant => "constant",
            GrowthKind::Stcar => "stcar",
        };
        let _ = writeln!(
            s,
            "width = {}\nheight = {}\nsteps = {}",
            self.width, self.height, self.steps
        );
        let _ = writeln!(s, "cell_size = {}\nx0 = {}\ny0 = {}", self.cell_size, self.x0, self.y0);
        let _ = writeln!(s, "time_step = {}\nseed = {}", self.time_step, self.seed);
        let _ = writeln!(s, "motion = {motion}\nu = {}\nv = {}", self.u, self.v);
        let _ = writeln!(s, "omega = {}\ndivergence = {}", self.omega, self.divergence);
        if let Some(c) = self.center {
            let _ = writeln!(s, "center_col = {}\ncenter_row = {}", c[0], c[1]);
        }
        let _ = writeln!(s, "max_speed = {}", self.max_speed);
        let _ = writeln!(s, "background = {}\nblobs = {}", self.background, self.blobs);
        let _ = writeln!(
            s,
            "blob_amp_min = {}\nblob_amp_max = {}",
            self.blob_amp_min, self.blob_amp_max
        );
        let _ = writeln!(
            s,
            "blob_radius_min = {}\nblob_radius_max = {}",
            self.blob_radius_min, self.blob_radius_max
        );
        let _ = writeln!(s, "noise_amp = {}\nnoise_scale = {}", self.noise_amp, self.noise_scale);
        let _ = writeln!(s, "growth = {growth}\ngrowth_rate = {}", self.growth_rate);
        let _ = writeln!(
            s,
            "growth_blobs = {}\ngrowth_blob_amp = {}",
            self.growth_blobs, self.growth_blob_amp
        );
        let _ = writeln!(s, "growth_blob_radius = {}", self.growth_blob_radius);
        let _ = writeln!(
            s,
            "rho = {}\nsigma = {}\nr = {}",
            self.rho,
            self.sigma,
            format_list(&self.r)
        );
        let _ = writeln!(
            s,
            "array_size = {}\nspacing = {}\nburn_in = {}",
            self.array_size, self.spacing, self.burn_in
        );
        s
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.width, self.height, self.x0, self.y0, self.cell_size)
    }

    fn center_px(&self) -> [f64; 2] {
        self.center
            .unwrap_or([(self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: String| Err(Error::Config(format!("{k}: {why}")));
        if self.steps < 2 {
            return bad("steps", "need at least 2 scans".into());
        }
        if self.time_step <= 0 {
            return bad("time_step", "must be positive".into());
        }
        if !(self.blob_amp_min >= 0.0 && self.blob_amp_max >= self.blob_amp_min) {
            return bad("blob_amp_min", "blob amplitudes must satisfy 0 <= min <= max".into());
        }
        if !(self.blob_radius_min > 0.0 && self.blob_radius_max >= self.blob_radius_min) {
            return bad("blob_radius_min", "blob radii must satisfy 0 < min <= max".into());
        }
        if !(self.noise_amp >= 0.0) {
            return bad("noise_amp", "must be non-negative".into());
        }
        if !(self.noise_scale > 0.0) {
            return bad("noise_scale", "must be positive".into());
        }
        if !(self.background >= 0.0) {
            return bad("background", "must be non-negative".into());
        }
        if !(self.growth_blob_radius > 0.0) {
            return bad("growth_blob_radius", "must be positive".into());
        }
        if !(self.sigma >= 0.0) {
            return bad("sigma", "must be non-negative".into());
        }
        if self.r.is_empty() {
            return bad("r", "need at least one coefficient".into());
        }
        if self.motion == MotionKind::Divergent && !(self.divergence > -1.0) {
            return bad("divergence", "must exceed -1".into());
        }
        self.grid()?;
        let layout = build_layout(self.width, self.height, self.array_size, self.spacing)
            .map_err(|e| Error::Config(format!("array_size: {e}")))?;
        // Speed bound, checked componentwise on every grid corner and time.
        let corners = [
            [0.0, 0.0],
            [self.width as f64 - 1.0, 0.0],
            [0.0, self.height as f64 - 1.0],
            [self.width as f64 - 1.0, self.height as f64 - 1.0],
        ];
        for t in 1..self.steps {
            for &p in &corners {
                let v = self.velocity_px(t, p);
                if v[0].abs() > self.max_speed + 1e-12 || v[1].abs() > self.max_speed + 1e-12 {
                    return bad(
                        "max_speed",
                        format!(
                            "displacement ({:.3}, {:.3}) px at t = {t} exceeds {}",
                            v[0], v[1], self.max_speed
                        ),
                    );
                }
            }
        }
        if self.growth == GrowthKind::Stcar {
            let s = lattice_structure(&layout)?;
            let (lo, hi) = rho_bounds(&s);
            if !(self.rho > lo && self.rho < hi) {
                return bad(
                    "rho",
                    format!("{} outside the admissible interval ({lo}, {hi})", self.rho),
                );
            }
        }
        Ok(())
    }

    /// Position at time `t` of the material at `a` at time 1 (pixels).
    pub fn forward_px(&self, t: usize, a: Point) -> Point {
        let k = (t - 1) as f64;
        let c = self.center_px();
        match self.motion {
            MotionKind::Uniform => [a[0] + k * self.u, a[1] + k * self.v],
            MotionKind::Rotational => {
                let (s, co) = (k * self.omega).sin_cos();
                let (dx, dy) = (a[0] - c[0], a[1] - c[1]);
                [c[0] + co * dx - s * dy, c[1] + s * dx + co * dy]
            }
            MotionKind::Divergent => {
                let f = (1.0 + self.divergence).powf(k);
                [c[0] + f * (a[0] - c[0]), c[1] + f * (a[1] - c[1])]
            }
        }
    }

    /// Material point at time 1 of pixel `p` at time `t`.
    pub fn back_px(&self, t: usize, p: Point) -> Point {
        let k = (t - 1) as f64;
        let c = self.center_px();
        match self.motion {
            MotionKind::Uniform => [p[0] - k * self.u, p[1] - k * self.v],
            MotionKind::Rotational => {
                let (s, co) = (-k * self.omega).sin_cos();
                let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                [c[0] + co * dx - s * dy, c[1] + s * dx + co * dy]
            }
            MotionKind::Divergent => {
                let f = (1.0 + self.divergence).powf(-k);
                [c[0] + f * (p[0] - c[0]), c[1] + f * (p[1] - c[1])]
            }
        }
    }

    /// Displacement from `t` to `t + 1` of whatever sits at pixel `p` at `t`.
    pub fn velocity_px(&self, t: usize, p: Point) -> Point {
        let q = self.forward_px(t + 1, self.back_px(t, p));
        [q[0] - p[0], q[1] - p[1]]
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    c: Point,
    amp: f64,
    radius: f64,
}

impl Blob {
    fn eval(&self, p: Point) -> f64 {
        let d2 = (p[0] - self.c[0]).powi(2) + (p[1] - self.c[1]).powi(2);
        self.amp * (-d2 / (2.0 * self.radius * self.radius)).exp()
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice_hash(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1000_0000_01B3) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinear value noise in `[0, 1)`.
fn value_noise(p: Point, scale: f64, seed: u64) -> f64 {
    let (x, y) = (p[0] / scale, p[1] / scale);
    let (ix, iy) = (x.floor() as i64, y.floor() as i64);
    let (fx, fy) = (x - ix as f64, y - iy as f64);
    let h = |a, b| lattice_hash(a, b, seed);
    (1.0 - fx) * (1.0 - fy) * h(ix, iy)
        + fx * (1.0 - fy) * h(ix + 1, iy)
        + (1.0 - fx) * fy * h(ix, iy + 1)
        + fx * fy * h(ix + 1, iy + 1)
}

/// Scalar field on the array lattice with bilinear interpolation and
/// constant extension.
#[derive(Debug, Clone)]
struct LatticeScalar {
    origin: Point,
    spacing: f64,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl LatticeScalar {
    fn at(&self, p: Point) -> f64 {
        let fc = ((p[0] - self.origin[0]) / self.spacing).clamp(0.0, (self.cols - 1) as f64);
        let fr = ((p[1] - self.origin[1]) / self.spacing).clamp(0.0, (self.rows - 1) as f64);
        let c0 = (fc.floor() as usize).min(self.cols.saturating_sub(2));
        let r0 = (fr.floor() as usize).min(self.rows.saturating_sub(2));
        let c1 = (c0 + 1).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let (wc, wr) = (fc - c0 as f64, fr - r0 as f64);
        let v = |r: usize, c: usize| self.values[r * self.cols + c];
        (1.0 - wc) * (1.0 - wr) * v(r0, c0)
            + wc * (1.0 - wr) * v(r0, c1)
            + (1.0 - wc) * wr * v(r1, c0)
            + wc * wr * v(r1, c1)
    }
}

fn lattice_structure(layout: &ArrayLayout) -> Result<CarStructure> {
    let pts: Vec<Point> = layout.centers_px.iter().map(|&(c, r)| [c as f64, r as f64]).collect();
    let d = 1.5 * layout.spacing as f64;
    CarStructure::from_neighbours(neighbour_sets(&pts, d)?, &pts, d, WeightFn::Binary)
}

/// Draw `count` consecutive CAR growth fields on the array lattice.
pub fn growth_lattice_series(spec: &SceneSpec, layout: &ArrayLayout, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let s = lattice_structure(layout)?;
    let process = StcarProcess::stationary(
        s,
        CarParams {
            rho: spec.rho,
            sigma: spec.sigma,
        },
        spec.r.clone(),
    )?;
    sample_stcar(&process, count, spec.burn_in, seed)
}

/// Known quantities behind a generated scene.
#[derive(Debug, Clone)]
pub struct SceneTruth {
    pub grid: GridSpec,
    pub layout: ArrayLayout,
    /// True positions (km) of the arrays seeded at the layout centres.
    pub trajectories: TrackState,
    /// Displacement (km/step) between scans `t` and `t + 1` at the layout
    /// nodes, for `t = 1..steps−1`.
    pub node_velocity: Vec<Vec<[f64; 2]>>,
    /// Patch-mean growth along each trajectory for `t = 2..steps−1`.
    pub growth: Vec<GrowthField>,
    /// CAR lattice fields `Y_t` for `t = 1..steps−1` (empty unless STCAR).
    pub lattice_y: Vec<Vec<f64>>,
    pub rho: f64,
    pub sigma: f64,
    pub r: Vec<f64>,
}

/// Generated scans plus their truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub fields: Vec<ReflectivityField>,
    pub truth: SceneTruth,
}

struct Generator<'a> {
    spec: &'a SceneSpec,
    texture: Vec<Blob>,
    growth_blobs: Vec<Blob>,
    lattice: Vec<LatticeScalar>,
    noise_seed: u64,
}

impl Generator<'_> {
    fn texture(&self, a: Point) -> f64 {
        let s = self.spec;
        let mut v = s.background + self.texture.iter().map(|b| b.eval(a)).sum::<f64>();
        if s.noise_amp > 0.0 {
            v += s.noise_amp * value_noise(a, s.noise_scale, self.noise_seed);
        }
        v
    }

    /// `g_t` at material point `a`, for `t ≥ 1`.
    fn growth(&self, t: usize, a: Point) -> f64 {
        let s = self.spec;
        match s.growth {
            GrowthKind::Zero => 0.0,
            GrowthKind::Constant | GrowthKind::Stcar => {
                let mut g = s.growth_rate + self.growth_blobs.iter().map(|b| b.eval(a)).sum::<f64>();
                if let Some(y) = self.lattice.get(t - 1) {
                    g += y.at(a);
                }
                g
            }
        }
    }

    /// `L_t(a)` by running the two-step chain.
    fn lagrangian(&self, t: usize, a: Point) -> f64 {
        let b = self.texture(a);
        if t == 1 {
            return b;
        }
        let (mut older, mut newer) = (b, b + self.growth(1, a));
        for s in 2..t {
            let next = older + 2.0 * self.growth(s, a);
            older = newer;
            newer = next;
        }
        newer
    }
}

/// Build the scan sequence and its truth bundle.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let grid = spec.grid()?;
    let layout = build_layout(spec.width, spec.height, spec.array_size, spec.spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Material that enters the grid later starts up to `steps · max_speed`
    // pixels outside, so blobs are spread over the enlarged domain.
    let margin = spec.steps as f64 * spec.max_speed;
    let blob = |rng: &mut ChaCha8Rng, amp: f64, radius: f64| Blob {
        c: [
            rng.gen_range(-margin..spec.width as f64 + margin),
            rng.gen_range(-margin..spec.height as f64 + margin),
        ],
        amp,
        radius,
    };
    let texture: Vec<Blob> = (0..spec.blobs)
        .map(|_| {
            let amp = rng.gen_range(spec.blob_amp_min..=spec.blob_amp_max);
            let radius = rng.gen_range(spec.blob_radius_min..=spec.blob_radius_max);
            blob(&mut rng, amp, radius)
        })
        .collect();
    let growth_blobs: Vec<Blob> = if spec.growth == GrowthKind::Zero {
        Vec::new()
    } else {
        (0..spec.growth_blobs)
            .map(|_| {
                let amp = rng.gen_range(-1.0..=1.0) * spec.growth_blob_amp;
                blob(&mut rng, amp, spec.growth_blob_radius)
            })
            .collect()
    };
    let noise_seed: u64 = rng.gen();
    let y_seed: u64 = rng.gen();
    let lattice_y = if spec.growth == GrowthKind::Stcar {
        growth_lattice_series(spec, &layout, spec.steps - 1, y_seed)?
    } else {
        Vec::new()
    };
    let (c0, r0) = layout.centers_px[0];
    let lattice = lattice_y
        .iter()
        .map(|v| LatticeScalar {
            origin: [c0 as f64, r0 as f64],
            spacing: layout.spacing as f64,
            rows: layout.rows,
            cols: layout.cols,
            values: v.clone(),
        })
        .collect();
    let gen = Generator {
        spec,
        texture,
        growth_blobs,
        lattice,
        noise_seed,
    };

    let fields = (1..=spec.steps)
        .map(|t| {
            ReflectivityField::from_fn(grid, (t as i64 - 1) * spec.time_step, |c, r| {
                gen.lagrangian(t, spec.back_px(t, [c as f64, r as f64]))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let to_km = |p: Point| grid.to_km(p[0], p[1]);
    let seeds: Vec<Point> = layout.centers_px.iter().map(|&(c, r)| [c as f64, r as f64]).collect();
    let traj_px: Vec<Vec<Point>> = (1..=spec.steps)
        .map(|t| seeds.iter().map(|&a| spec.forward_px(t, a)).collect())
        .collect();
    let trajectories =
        TrackState::from_positions(traj_px.iter().map(|v| v.iter().map(|&p| to_km(p)).collect()).collect())?;
    let node_velocity = (1..spec.steps)
        .map(|t| {
            seeds
                .iter()
                .map(|&p| {
                    let v = spec.velocity_px(t, p);
                    [v[0] * spec.cell_size, v[1] * spec.cell_size]
                })
                .collect()
        })
        .collect();

    let half = (spec.array_size / 2) as i64;
    let inside = |p: Point| {
        let e = 1e-9;
        p[0] - half as f64 > -e
            && p[1] - half as f64 > -e
            && p[0] + (half as f64) < spec.width as f64 - 1.0 + e
            && p[1] + (half as f64) < spec.height as f64 - 1.0 + e
    };
    let growth = (2..spec.steps)
        .map(|t| {
            let (values, valid) = (0..seeds.len())
                .map(|i| {
                    let x = traj_px[t - 1][i];
                    let mut sum = 0.0;
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let a = spec.back_px(t, [x[0] + dx as f64, x[1] + dy as f64]);
                            sum += gen.growth(t, a);
                        }
                    }
                    let n = ((2 * half + 1) * (2 * half + 1)) as f64;
                    (sum / n, inside(traj_px[t - 2][i]) && inside(traj_px[t][i]))
                })
                .unzip();
            GrowthField { t, values, valid }
        })
        .collect();

    Ok(Scene {
        fields,
        truth: SceneTruth {
            grid,
            layout,
            trajectories,
            node_velocity,
            growth,
            lattice_y,
            rho: spec.rho,
            sigma: spec.sigma,
            r: spec.r.clone(),
        },
    })
}

#[derive(Serialize)]
struct VelocityTruthRow {
    array_id: usize,
    t: usize,
    x_km: f64,
    y_km: f64,
    u: f64,
    v: f64,
}

#[derive(Serialize)]
struct GrowthTruthRow {
    array_id: usize,
    t: usize,
    x_km: f64,
    y_km: f64,
    growth_dbz: f64,
    valid: bool,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Write `scan_NNN.radar` files plus the truth CSVs into `dir`; returns the
/// scan paths in order.
pub fn write_scene(scene: &Scene, spec: &SceneSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(scene.fields.len());
    for (k, f) in scene.fields.iter().enumerate() {
        let p = dir.join(format!("scan_{:03}.radar", k + 1));
        write_field(f, &p)?;
        paths.push(p);
    }
    let t = &scene.truth;
    let nodes = t.layout.centers_km(&t.grid);
    let vel = t.node_velocity.iter().enumerate().flat_map(|(k, vs)| {
        let nodes = &nodes;
        vs.iter().enumerate().map(move |(i, v)| VelocityTruthRow {
            array_id: i,
            t: k + 1,
            x_km: nodes[i][0],
            y_km: nodes[i][1],
            u: v[0],
            v: v[1],
        })
    });
    crate::raster::write_atomic(&dir.join("truth_velocity.csv"), &csv_bytes(vel)?)?;
    let growth = t.growth.iter().flat_map(|g| {
        let pos = t.trajectories.at(g.t);
        (0..g.len()).map(move |i| GrowthTruthRow {
            array_id: i,
            t: g.t,
            x_km: pos[i][0],
            y_km: pos[i][1],
            growth_dbz: g.values[i],
            valid: g.valid[i],
        })
    });
    crate::raster::write_atomic(&dir.join("truth_growth.csv"), &csv_bytes(growth)?)?;
    let mut params = String::from("name,value\n");
    let _ = writeln!(params, "rho,{}", t.rho);
    let _ = writeln!(params, "sigma,{}", t.sigma);
    for (j, r) in t.r.iter().enumerate() {
        let _ = writeln!(params, "r{},{}", j + 1, r);
    }
    crate::raster::write_atomic(&dir.join("truth_params.csv"), params.as_bytes())?;
    crate::raster::write_atomic(&dir.join("scene.txt"), spec.to_text().as_bytes())?;
    Ok(paths)
}

/// Componentwise error summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub n: usize,
    pub max_abs: f64,
    pub rmse: f64,
    pub bias: f64,
}

/// Error statistics of `estimated − truth` over entries where `mask` holds.
pub fn truth_compare(estimated: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Result<ErrorStats> {
    if estimated.len() != truth.len() || mask.is_some_and(|m| m.len() != truth.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {} truth values",
            estimated.len(),
            truth.len()
        )));
    }
    let (mut n, mut max_abs, mut sq, mut sum) = (0usize, 0.0f64, 0.0, 0.0);
    for i in 0..truth.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let e = estimated[i] - truth[i];
        n += 1;
        max_abs = max_abs.max(e.abs());
        sq += e * e;
        sum += e;
    }
    let nf = n.max(1) as f64;
    Ok(ErrorStats {
        n,
        max_abs,
        rmse: (sq / nf).sqrt(),
        bias: sum / nf,
    })
}

/// Per-component errors of a vector field plus the fraction of vectors
/// with either component off by more than `tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorReport {
    pub u: ErrorStats,
    pub v: ErrorStats,
    pub mismatch_fraction: f64,
}

pub fn compare_vectors(
    estimated: &[[f64; 2]],
    truth: &[[f64; 2]],
    mask: Option<&[bool]>,
    tol: f64,
) -> Result<VectorReport> {
    let split = |v: &[[f64; 2]], k: usize| v.iter().map(|x| x[k]).collect::<Vec<_>>();
    let u = truth_compare(&split(estimated, 0), &split(truth, 0), mask)?;
    let v = truth_compare(&split(estimated, 1), &split(truth, 1), mask)?;
    let (mut n, mut off) = (0usize, 0usize);
    for i in 0..truth.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        n += 1;
        if (estimated[i][0] - truth[i][0]).abs() > tol || (estimated[i][1] - truth[i][1]).abs() > tol {
            off += 1;
        }
    }
    Ok(VectorReport {
        u,
        v,
        mismatch_fraction: off as f64 / n.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advect::{growth_from_scans, sample_reflectivity};

    fn small(growth: GrowthKind) -> SceneSpec {
        SceneSpec {
            width: 48,
            height: 48,
            steps: 5,
            array_size: 9,
            spacing: 4,
            blobs: 6,
            growth,
            growth_rate: 1.5,
            growth_blobs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn static_scene_has_identical_frames() {
        let spec = SceneSpec {
            u: 0.0,
            v: 0.0,
            ..small(GrowthKind::Zero)
        };
        let s = generate_scene(&spec).unwrap();
        for f in &s.fields[1..] {
            assert_eq!(f.values(), s.fields[0].values());
        }
    }

    #[test]
    fn uniform_shift_rolls_frames() {
        let s = generate_scene(&small(GrowthKind::Zero)).unwrap();
        let (u, v) = (2usize, 1usize);
        for t in 1..s.fields.len() {
            let (a, b) = (&s.fields[t - 1], &s.fields[t]);
            for r in v..48 {
                for c in u..48 {
                    assert!((b.raw(c, r) - a.raw(c - u, r - v)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn integer_motion_growth_is_recovered_exactly() {
        let s = generate_scene(&small(GrowthKind::Stcar)).unwrap();
        let tr = &s.truth.trajectories;
        for truth in &s.truth.growth {
            let t = truth.t;
            let zp = sample_reflectivity(&s.fields[t - 2], tr.at(t - 1), 9, 0.2);
            let zn = sample_reflectivity(&s.fields[t], tr.at(t + 1), 9, 0.2);
            let g = growth_from_scans(&zp, &zn, t).unwrap();
            for i in 0..g.len() {
                if truth.valid[i] {
                    assert!(g.valid[i]);
                    assert!((g.values[i] - truth.values[i]).abs() < 1e-9, "t={t} i={i}");
                }
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_scene(&small(GrowthKind::Stcar)).unwrap();
        let b = generate_scene(&small(GrowthKind::Stcar)).unwrap();
        for (x, y) in a.fields.iter().zip(&b.fields) {
            assert_eq!(x.values(), y.values());
        }
    }

    #[test]
    fn lattice_series_has_ar2_autocorrelation() {
        let spec = SceneSpec {
            width: 40,
            height: 40,
            array_size: 5,
            spacing: 3,
            growth: GrowthKind::Stcar,
            ..Default::default()
        };
        let layout = build_layout(40, 40, 5, 3).unwrap();
        let ys = growth_lattice_series(&spec, &layout, 600, 3).unwrap();
        let (r1, r2) = (0.9, -0.3);
        let rho1 = r1 / (1.0 - r2);
        let rho2 = r1 * rho1 + r2;
        let n = ys[0].len();
        let acf = |lag: usize| {
            let (mut num, mut den) = (0.0, 0.0);
            for t in lag..ys.len() {
                for i in 0..n {
                    num += ys[t][i] * ys[t - lag][i];
                }
            }
            for y in &ys {
                den += y.iter().map(|v| v * v).sum::<f64>();
            }
            num / den * ys.len() as f64 / (ys.len() - lag) as f64
        };
        assert!((acf(1) - rho1).abs() < 0.05, "{} vs {rho1}", acf(1));
        assert!((acf(2) - rho2).abs() < 0.05, "{} vs {rho2}", acf(2));
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = SceneSpec {
            motion: MotionKind::Rotational,
            omega: 0.01,
            center: Some([20.0, 30.5]),
            growth: GrowthKind::Stcar,
            r: vec![0.7, 0.1, -0.05],
            ..Default::default()
        };
        let back = SceneSpec::from_text(&spec.to_text(), Path::new("s")).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let fast = SceneSpec {
            u: 9.0,
            ..Default::default()
        };
        assert!(matches!(fast.validate(), Err(Error::Config(m)) if m.starts_with("max_speed")));
        assert!(matches!(
            SceneSpec::from_text("speed = 3", Path::new("s")),
            Err(Error::Config(m)) if m.contains("speed")
        ));
        let neg = SceneSpec {
            blob_amp_min: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
        let bad_rho = SceneSpec {
            growth: GrowthKind::Stcar,
            rho: 1.2,
            ..Default::default()
        };
        assert!(matches!(bad_rho.validate(), Err(Error::Config(m)) if m.starts_with("rho")));
    }

    #[test]
    fn motion_maps_are_inverse() {
        for motion in [MotionKind::Uniform, MotionKind::Rotational, MotionKind::Divergent] {
            let spec = SceneSpec {
                motion,
                omega: 0.03,
                divergence: 0.02,
                ..Default::default()
            };
            let a = [17.3, 90.1];
            for t in 1..6 {
                let b = spec.back_px(t, spec.forward_px(t, a));
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn compare_counts_mismatches() {
        let truth = vec![[1.0, 0.5]; 20];
        let mut est = truth.clone();
        est[3][0] += 0.5;
        est[11][1] -= 0.5;
        let rep = compare_vectors(&est, &truth, None, 1e-9).unwrap();
        assert!((rep.mismatch_fraction - 0.10).abs() < 1e-12);
        let same = truth_compare(&[1.0, 2.0], &[1.0, 2.0], None).unwrap();
        assert_eq!((same.max_abs, same.rmse, same.bias), (0.0, 0.0, 0.0));
        assert!(truth_compare(&[1.0], &[1.0, 2.0], None).is_err());
    }
}
