//! Gridded population estimation from four-band multispectral imagery.
//!
//! The pipeline runs raster ingestion and ambient-population combination
//! ([`raster`]), neighborhood patch assembly ([`patch`]), log-target dataset
//! construction with reproducible splits ([`dataset`]), a small convolutional
//! regressor trained under log-cosh loss with Adam ([`estimator`]), and the
//! agreement / residual-bias statistics used to judge it ([`eval`]). A seeded
//! scene generator ([`synth`]) produces co-registered imagery and population
//! grids for desk-scale experiments.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases below
//! fix the scalar to `f64`, which is what training and evaluation use.

pub mod dataset;
pub mod estimator;
pub mod eval;
pub mod num;
pub mod patch;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod table;

pub use num::Scalar;

/// Population / value grid in double precision.
pub type GeoGrid = raster::GeoGrid<f64>;
/// Single-precision grid.
pub type GeoGrid32 = raster::GeoGrid<f32>;
/// Model input tensor in double precision.
pub type PatchTensor = patch::PatchTensor<f64>;
/// Model input tensor in single precision.
pub type PatchTensor32 = patch::PatchTensor<f32>;
/// Reference convnet with double-precision parameters.
pub type Network = estimator::Network<f64>;
/// Reference convnet with single-precision parameters.
pub type Network32 = estimator::Network<f32>;
/// Parameters plus Adam state in double precision.
pub type ParamSet = estimator::ParamSet<f64>;
/// Agreement metrics in double precision.
pub type MetricsReport = eval::MetricsReport<f64>;

pub use dataset::DatasetManifest;
pub use eval::BiasReport;
pub use raster::{BandStack, GridHeader};
pub use rng::Xoshiro256StarStar;
