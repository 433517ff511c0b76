//! Pipeline configuration: every tunable in one flat `key = value` file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimate::EstimationConfig;
use crate::kv::{parse_kv, Fields};
use crate::motion::MotionConfig;
use crate::stcar::WeightFn;

/// Keys accepted in a config file or as `--key value` overrides.
pub const CONFIG_KEYS: &[&str] = &[
    "search_radius",
    "min_valid_correlation",
    "min_patch_variance",
    "lambda",
    "cg_tolerance",
    "cg_max_iterations",
    "max_missing_fraction",
    "array_size",
    "spacing",
    "kernels",
    "bandwidth",
    "neighbour_distance",
    "weight_fn",
    "max_iterations",
    "tolerance",
    "rho_tolerance",
    "multistarts",
    "ridge",
    "q",
    "horizon",
    "threshold",
    "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub motion: MotionConfig,
    pub array_size: usize,
    /// Pixels between neighbouring array centres.
    pub spacing: usize,
    /// Kernel count `J`.
    pub kernels: usize,
    /// Kernel bandwidth, km.
    pub bandwidth: f64,
    /// CAR neighbourhood distance in km; `None` means 1.5 lattice spacings.
    pub neighbour_distance: Option<f64>,
    pub weight_fn: WeightFn,
    pub estimation: EstimationConfig,
    /// Forecast steps.
    pub horizon: usize,
    /// Reflectivity threshold (dBZ) for the heavy-echo metric.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            motion: MotionConfig::default(),
            array_size: 19,
            spacing: 5,
            kernels: 30,
            bandwidth: 10.0,
            neighbour_distance: None,
            weight_fn: WeightFn::Binary,
            estimation: EstimationConfig::default(),
            horizon: 6,
            threshold: 35.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Build from a key-value map, rejecting unknown keys and out-of-range
    /// values with the offending key named.
    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let d = PipelineConfig::default();
        let mut f = Fields::new(map);
        let motion = MotionConfig {
            search_radius: f.take("search_radius", d.motion.search_radius)?,
            min_valid_correlation: f.take("min_valid_correlation", d.motion.min_valid_correlation)?,
            min_patch_variance: f.take("min_patch_variance", d.motion.min_patch_variance)?,
            lambda: f.take("lambda", d.motion.lambda)?,
            tolerance: f.take("cg_tolerance", d.motion.tolerance)?,
            max_iterations: f.take("cg_max_iterations", d.motion.max_iterations)?,
            max_missing_fraction: f.take("max_missing_fraction", d.motion.max_missing_fraction)?,
        };
        let estimation = EstimationConfig {
            max_iterations: f.take("max_iterations", d.estimation.max_iterations)?,
            tolerance: f.take("tolerance", d.estimation.tolerance)?,
            rho_tolerance: f.take("rho_tolerance", d.estimation.rho_tolerance)?,
            multistarts: f.take("multistarts", d.estimation.multistarts)?,
            ridge: f.take("ridge", d.estimation.ridge)?,
            q: f.take("q", d.estimation.q)?,
        };
        let neighbour_distance = match f.take_opt("neighbour_distance").as_deref() {
            None | Some("auto") => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("neighbour_distance: cannot parse {v:?}")))?,
            ),
        };
        let weight_fn = match f.take_opt("weight_fn") {
            None => d.weight_fn,
            Some(v) => {
                WeightFn::parse(&v).ok_or_else(|| Error::Config(format!("weight_fn: unknown function {v:?}")))?
            }
        };
        let cfg = PipelineConfig {
            motion,
            array_size: f.take("array_size", d.array_size)?,
            spacing: f.take("spacing", d.spacing)?,
            kernels: f.take("kernels", d.kernels)?,
            bandwidth: f.take("bandwidth", d.bandwidth)?,
            neighbour_distance,
            weight_fn,
            estimation,
            horizon: f.take("horizon", d.horizon)?,
            threshold: f.take("threshold", d.threshold)?,
            seed: f.take("seed", d.seed)?,
        };
        f.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        Self::from_map(parse_kv(text, path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::Config(format!("{k}: {why}")));
        self.motion.validate()?;
        self.estimation.validate()?;
        if self.array_size < 3 || self.array_size % 2 == 0 {
            return bad("array_size", "must be odd and at least 3");
        }
        if self.spacing == 0 {
            return bad("spacing", "must be at least 1");
        }
        if self.kernels == 0 {
            return bad("kernels", "must be at least 1");
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return bad("bandwidth", "must be positive");
        }
        if let Some(d) = self.neighbour_distance {
            if !(d > 0.0) || !d.is_finite() {
                return bad("neighbour_distance", "must be positive");
            }
        }
        if self.horizon == 0 {
            return bad("horizon", "must be at least 1");
        }
        if !self.threshold.is_finite() {
            return bad("threshold", "must be finite");
        }
        Ok(())
    }

    /// Neighbourhood distance in km for a grid with the given cell size.
    pub fn distance_km(&self, cell_size: f64) -> f64 {
        self.neighbour_distance.unwrap_or(1.5 * self.spacing as f64 * cell_size)
    }

    pub fn to_text(&self) -> String {
        let m = &self.motion;
        let e = &self.estimation;
        let mut s = String::new();
        let _ = writeln!(s, "search_radius = {}", m.search_radius);
        let _ = writeln!(s, "min_valid_correlation = {}", m.min_valid_correlation);
        let _ = writeln!(s, "min_patch_variance = {}", m.min_patch_variance);
        let _ = writeln!(s, "lambda = {}", m.lambda);
        let _ = writeln!(s, "cg_tolerance = {}", m.tolerance);
        let _ = writeln!(s, "cg_max_iterations = {}", m.max_iterations);
        let _ = writeln!(s, "max_missing_fraction = {}", m.max_missing_fraction);
        let _ = writeln!(s, "array_size = {}", self.array_size);
        let _ = writeln!(s, "spacing = {}", self.spacing);
        let _ = writeln!(s, "kernels = {}", self.kernels);
        let _ = writeln!(s, "bandwidth = {}", self.bandwidth);
        match self.neighbour_distance {
            Some(d) => {
                let _ = writeln!(s, "neighbour_distance = {d}");
            }
            None => s.push_str("neighbour_distance = auto\n"),
        }
        let _ = writeln!(s, "weight_fn = {}", self.weight_fn.name());
        let _ = writeln!(s, "max_iterations = {}", e.max_iterations);
        let _ = writeln!(s, "tolerance = {}", e.tolerance);
        let _ = writeln!(s, "rho_tolerance = {}", e.rho_tolerance);
        let _ = writeln!(s, "multistarts = {}", e.multistarts);
        let _ = writeln!(s, "ridge = {}", e.ridge);
        let _ = writeln!(s, "q = {}", e.q);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "threshold = {}", self.threshold);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}
