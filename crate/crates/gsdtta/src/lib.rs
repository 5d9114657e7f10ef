//! Graph spectral domain test-time adaptation (GSDTTA) for point-cloud
//! classification at desk scale.
//!
//! The pipeline represents a point cloud as an outlier-aware weighted kNN
//! graph, moves it into the graph spectral domain through the graph Fourier
//! transform, applies a learnable adjustment to the low-frequency
//! coefficients, and alternates between adapting that adjustment and the
//! classifier parameters with an eigenmap-guided self-training objective.
//!
//! Modules follow the pipeline order:
//!
//! * [`pointcloud`] — cloud type, XYZ I/O, synthetic shapes, corruptions
//! * [`graph`] — outlier-aware RBF-weighted kNN graphs
//! * [`spectral`] — Laplacian spectrum, GFT/IGFT, spectral adjustment
//! * [`nn`] — compact differentiable point classifier with AdamW
//! * [`selftrain`] — centroids, pseudo-labels and adaptation losses
//! * [`adapt`] — the alternating test-time adaptation driver

pub mod adapt;
pub mod error;
pub mod graph;
pub mod nn;
pub mod pointcloud;
pub mod selftrain;
pub mod spectral;
pub mod threads;

pub use error::{Error, Result};
