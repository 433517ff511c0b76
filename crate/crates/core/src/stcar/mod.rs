//! Space-time conditional autoregressive model of the growth field: kernel
//! mixture mean, CAR neighbourhood structure and the temporal recursion.

mod car;
mod kernels;
mod sampler;

pub use car::{
    build_weights, car_covariance, lattice_points, neighbour_sets, rho_bounds, CarParams, CarStructure, WeightFn,
};
pub use kernels::{place_kernels, weighted_kmeans, KernelMeanModel};
pub use sampler::{sample_stcar, StcarProcess};
