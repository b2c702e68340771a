//! Raster and kernel value types, 2-D convolution with an explicit boundary
//! policy, bilinear resampling and image/kernel file I/O.

mod conv;
pub mod io;
mod kernel;
mod raster;
mod resample;

pub use conv::{convolve2d, convolve2d_adjoint, correlate2d, crop, pad, BoundaryPolicy};
pub use kernel::{project_simplex, BlurKernel, Filter2d, SUM_TOLERANCE};
pub use raster::RasterImage;
pub use resample::{resample, resample_to};
