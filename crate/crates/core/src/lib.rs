//! Multi-scan LiDAR semantic segmentation pipeline: scan accumulation,
//! range-aware downsampling, range-weighted label voting and range-bucketed
//! evaluation.

pub mod accumulate;
pub mod downsample;
pub mod error;
pub mod evaluate;
pub mod geom;
pub mod postproc;
pub mod rng;
pub mod seqio;
pub mod synth;
pub mod voxelgrid;
pub mod window;

pub use error::{Error, Result};
