//! Whole-slide image preprocessing.
//!
//! Tissue is detected on a low-power thumbnail, vectorized into hole-aware
//! polygons, mapped to level-0 coordinates and tiled into patch grids. The
//! [`pipeline`] module runs these stages over slide batches and persists
//! masks, contours, coordinate stores, features and patch images.

pub mod detect;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod mask;
pub mod pipeline;
pub mod morphology;
pub mod pyramid;
pub mod stats;
pub mod synth;
pub mod vectorize;

pub use error::{Error, Result};
pub use mask::TissueMask;
pub use pyramid::{open_slide, PyramidMeta, RgbImage, SlidePyramid};
