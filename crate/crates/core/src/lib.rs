//! Extraction of singular features (modes, filaments, walls, ...) from noisy
//! point clouds.
//!
//! The pipeline estimates the density with a Gaussian KDE, traces density
//! ridges of each dimension with subspace-constrained mean shift, keeps the
//! ridge points whose eigensignature clears a threshold, and groups the
//! survivors into connected components of a Rips graph.

pub mod cloud;
pub mod density;
pub mod error;
pub mod filtering;
pub mod io;
pub mod pipeline;
pub mod ridges;
pub mod signatures;
pub mod spectral;
pub mod synth;

pub use cloud::{Bounds, PointCloud};
pub use density::{silverman_bandwidth, DensityModel, LocalDensity};
pub use error::{Error, Result};
pub use filtering::{FeatureSet, Thresholds};
pub use pipeline::{run_pipeline, PipelineConfig, RunReport};
pub use ridges::{Convergence, RidgePoint, RidgeSet};
pub use signatures::SignatureVector;
pub use spectral::{Projector, Spectrum};
