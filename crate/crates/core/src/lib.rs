//! Link-level simulation and coverage planning for multi-user massive-MIMO
//! base stations mounted on high towers in rural areas.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: validated experiment configuration and unit conversions
//! - [`array`]: uniform cylindrical array geometry and steering vectors
//! - [`channel`]: rural-macro path loss, shadowing and clustered small-scale fading
//! - [`uplink`]: power control, RZF/ZF/MR combining, SINR and rates
//! - [`downlink`]: RZF precoding with equal power split
//! - [`montecarlo`]: user drops, percentiles, coverage search and sweeps
//! - [`econ`]: traffic arithmetic, covered users and population density
//! - [`geodata`]: population rasters and site evaluation
//! - [`manifest`]: run manifests embedded in every output file

pub mod array;
pub mod channel;
pub mod downlink;
pub mod econ;
pub mod geodata;
pub mod linalg;
pub mod manifest;
pub mod montecarlo;
pub mod scenario;
pub mod seeding;
pub mod uplink;

pub use num_complex::Complex64;

/// Dense complex matrix used for channels, combiners and precoders.
pub type CMatrix = nalgebra::DMatrix<Complex64>;

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
