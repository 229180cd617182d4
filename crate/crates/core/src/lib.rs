//! CPU Gaussian-splatting optimization lab.
//!
//! Fits a cloud of anisotropic 2D Gaussians to an image by differentiable
//! depth-sorted alpha blending, with sparse large-variance initialization and
//! a progressive screen-space low-pass filter. Also ships a 1D mixture toy and
//! scanline spectrum instrumentation.

pub mod ablate;
pub mod adam;
pub mod density;
pub mod error;
pub mod grad;
pub mod init;
pub mod io;
pub mod math;
pub mod model;
pub mod raster;
pub mod schedule;
pub mod spectrum;
pub mod ssim;
pub mod toy1d;
pub mod train;

pub use error::{Error, Result};
pub use model::{CloudState, Gaussian2D, TargetImage};
pub use raster::{render, RenderOutput, RenderSettings};
pub use train::{fit, TrainConfig};
