//! Film stylization engine.
//!
//! The crate is organized around a single raster type, [`ImagePlane`], which
//! flows through every stage:
//!
//! - [`image`]: raster model, bilinear resampling, sRGB/CIELAB, PNG I/O
//! - [`pyramid`]: Laplacian pyramid decomposition and exact reconstruction
//! - [`blocks`]: activation-free forward operators (LayerNorm, conv,
//!   SimpleGate, channel attention, mask network, multi-scale refinement)
//! - [`lut`]: 3D LUT lattices, trilinear application, `.cube` files, and the
//!   basis-LUT blending stage
//! - [`fit`]: losses, analytic lattice gradients, Adam fitting, gradient checks
//! - [`metrics`]: PSNR, SSIM (global and windowed), CIE76 ΔE
//! - [`pipeline`]: end-to-end stylization and weight-container lifecycle
//!
//! Image, pyramid, LUT, loss and metric code is generic over [`Scalar`]
//! (`f32` or `f64`); the neural blocks run in `f32` only.

pub mod blocks;
pub mod error;
pub mod fit;
pub mod image;
pub mod lut;
pub mod metrics;
pub mod pipeline;
pub mod pyramid;
pub mod rng;
pub mod scalar;
pub mod threads;
pub mod weights;

pub use error::{FilmError, Result};
pub use image::{ImagePlane, LabColor};
pub use lut::Lut3D;
pub use pyramid::PyramidDecomposition;
pub use scalar::Scalar;
pub use weights::{Tensor, WeightContainer};

/// Single-precision raster, the working type of the pipeline.
pub type Image = ImagePlane<f32>;
/// Double-precision raster, used by gradient checks and reference oracles.
pub type Image64 = ImagePlane<f64>;
/// Single-precision 3D LUT.
pub type Lut = Lut3D<f32>;
/// Double-precision 3D LUT.
pub type Lut64 = Lut3D<f64>;
/// Pyramid over single-precision planes.
pub type Pyramid = PyramidDecomposition<f32>;
