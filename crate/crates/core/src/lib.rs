//! Minimum-norm kernel interpolation with inner-product kernels, orthonormal
//! polynomial features, restricted lower isometry diagnostics and the
//! experiment drivers behind the `ridgeless` binary.

pub mod error;
pub mod interpolant;
pub mod kernels;
pub mod linalg;
pub mod multiindex;
pub mod orthopoly;
pub mod spectral;
pub mod experiments;

pub use error::{Error, Result};
pub use linalg::Design;
