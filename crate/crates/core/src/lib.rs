//! Approximately SE(2)-invariant image features: images are carried onto the
//! sphere by a Lie-group contraction, expanded in spherical harmonics and
//! summarized by the spherical bispectrum. On top of that sit a debiased
//! bispectrum estimator, bispectrum inversion and alignment for
//! multi-reference alignment, and invariant k-NN classification.

pub mod alignment;
pub mod bispectrum;
pub mod classification;
pub mod clebsch_gordan;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod harmonics;
pub mod image;
pub mod inversion;
pub mod lie;
pub mod mra;
pub mod projection;
pub mod quadrature;

pub use error::{Error, Result};
