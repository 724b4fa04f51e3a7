//! Articulated-object view synthesis, joint estimation and part-mesh
//! reconstruction.

pub mod camera;
pub mod dataset;
pub mod error;
pub mod frame;
pub mod joint;
pub mod metrics;
mod mc_table;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod recon;
pub mod synth;
pub mod train;

pub use error::{LarmError, Result};
pub use frame::SampleFrame;
