//! Time-aware neural voxels for dynamic scene reconstruction.
//!
//! A scene is a small voxel grid of learned features queried at several
//! sampling strides, plus compact networks: one embeds time, one deforms
//! points toward a canonical frame, and one decodes density and color.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoding;
pub mod gradcheck;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod nets;
pub mod optim;
pub mod raster;
pub mod render;
pub mod synth;
pub mod train;
pub mod voxels;

pub use error::{DatasetError, Error, Result};
