//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsiprep_core::synth::{random_blob_mask, render_level, SlideShapes};
use wsiprep_core::{RgbImage, TissueMask};

/// A `size`x`size` thumbnail with a few tissue lumps, some holed.
pub fn thumbnail(size: u32, seed: u64) -> RgbImage {
    let s = f64::from(size);
    let shapes = SlideShapes::random(&mut ChaCha8Rng::seed_from_u64(seed), s, s);
    render_level(&shapes, size, size, 1.0, seed)
}

pub fn blob_mask(size: u32, seed: u64) -> TissueMask {
    random_blob_mask(&mut ChaCha8Rng::seed_from_u64(seed), size, size)
}
