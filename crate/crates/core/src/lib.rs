//! MXDoG image abstraction and abstract style transfer.
//!
//! The crate provides:
//!
//! - [`filters`]: Gaussian blur, difference-of-Gaussians, the XDoG ramp,
//!   mean binarization and small-region removal, chained as [`filters::mxdog`],
//!   plus a differentiable surrogate for gradient-based use.
//! - [`net`]: a VGG-16-topology feature extractor with a reverse-mode pass
//!   back to image pixels.
//! - [`losses`]: content, style and MXDoG loss terms and their weighted total.
//! - [`optim`]: Adam on image pixels to minimize that total.
//! - [`gradcheck`]: finite-difference verification of the analytic gradient.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). With the
//! default `parallel` feature the blur and convolution kernels run on rayon;
//! results are bitwise identical to the sequential build.

pub mod error;
pub mod filters;
pub mod gradcheck;
pub mod image_io;
pub mod losses;
pub mod net;
pub mod optim;
mod par;
pub mod scalar;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result, WeightError};
pub use filters::MxdogParams;
pub use image_io::{load_image, resize_longest_edge, save_image};
pub use losses::{LossBreakdown, LossWeights, StyleTargets};
pub use net::{make_test_net, FeatureNet};
pub use optim::{stylize, Init, StylizeConfig};
pub use scalar::Scalar;
pub use tensor::{FeatureMap, ImageTensor};
pub use weights::{read_weights, write_weights, ConvParams};
