//! Radar reflectivity nowcasting.

pub mod advect;
pub mod config;
pub mod error;
pub mod estimate;
pub mod eval;
pub mod forecast;
pub mod kv;
pub mod linalg;
pub mod motion;
pub mod pipeline;
pub mod raster;
pub mod stcar;
pub mod synth;

pub use error::{Error, Result};
