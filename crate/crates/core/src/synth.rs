//! Synthetic slides and masks for tests, benchmarks and demos.

use std::path::Path;

use image::Rgb;
use rand::Rng;

use crate::error::Result;
use crate::mask::TissueMask;
use crate::pyramid::{write_pyramid_dir, RgbImage};

pub const BACKGROUND: [u8; 3] = [244, 243, 245];
pub const TISSUE: [u8; 3] = [214, 120, 178];

/// Axis-aligned ellipse in level-0 pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        dx * dx + dy * dy <= 1.0
    }
}

/// Tissue shapes in level-0 coordinates: union of `tissue` minus `holes`,
/// plus axis-aligned rectangles `(x, y, w, h)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlideShapes {
    pub tissue: Vec<Ellipse>,
    pub rects: Vec<(f64, f64, f64, f64)>,
    pub holes: Vec<Ellipse>,
}

impl SlideShapes {
    pub fn is_tissue(&self, x: f64, y: f64) -> bool {
        let inside = self.tissue.iter().any(|e| e.contains(x, y))
            || self.rects.iter().any(|&(rx, ry, rw, rh)| x >= rx && x < rx + rw && y >= ry && y < ry + rh);
        inside && !self.holes.iter().any(|e| e.contains(x, y))
    }

    /// A few tissue lumps, some with holes, spread over a `w`x`h` slide.
    pub fn random(rng: &mut impl Rng, w: f64, h: f64) -> Self {
        let n = rng.gen_range(1..=4);
        let mut s = Self::default();
        for _ in 0..n {
            let e = Ellipse {
                cx: rng.gen_range(0.2..0.8) * w,
                cy: rng.gen_range(0.2..0.8) * h,
                rx: rng.gen_range(0.08..0.2) * w,
                ry: rng.gen_range(0.08..0.2) * h,
            };
            if rng.gen_bool(0.5) {
                s.holes.push(Ellipse { rx: e.rx * 0.35, ry: e.ry * 0.35, ..e });
            }
            s.tissue.push(e);
        }
        s
    }
}

fn hash2(x: u32, y: u32, seed: u64) -> u64 {
    let mut z = seed ^ (u64::from(x) << 32 | u64::from(y));
    z = (z ^ (z >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    z = (z ^ (z >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    z ^ (z >> 33)
}

/// Render one pyramid level: each pixel samples the shapes at its centre in
/// level-0 coordinates. Tissue gets a little deterministic texture.
pub fn render_level(shapes: &SlideShapes, w: u32, h: u32, downsample: f64, seed: u64) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let (px, py) = ((f64::from(x) + 0.5) * downsample, (f64::from(y) + 0.5) * downsample);
        if shapes.is_tissue(px, py) {
            let n = (hash2(x, y, seed) % 21) as i16 - 10;
            Rgb(TISSUE.map(|c| (i16::from(c) + n).clamp(0, 255) as u8))
        } else {
            Rgb(BACKGROUND)
        }
    })
}

/// Levels for a pyramid whose level `i` is `level0 / downsamples[i]` (floored).
pub fn render_pyramid(shapes: &SlideShapes, level0: (u32, u32), downsamples: &[u32], seed: u64) -> Vec<RgbImage> {
    downsamples
        .iter()
        .map(|&d| render_level(shapes, (level0.0 / d).max(1), (level0.1 / d).max(1), f64::from(d), seed))
        .collect()
}

pub fn write_synthetic_slide(
    dir: &Path,
    slide_id: &str,
    shapes: &SlideShapes,
    level0: (u32, u32),
    downsamples: &[u32],
    objective_power: f64,
    seed: u64,
) -> Result<()> {
    write_pyramid_dir(dir, slide_id, &render_pyramid(shapes, level0, downsamples, seed), objective_power, Some(0.25))
}

/// Random blob mask: a union of ellipses with elliptical holes cut out and a
/// sprinkle of isolated specks.
pub fn random_blob_mask(rng: &mut impl Rng, w: u32, h: u32) -> TissueMask {
    let (fw, fh) = (f64::from(w), f64::from(h));
    let blobs: Vec<Ellipse> = (0..rng.gen_range(1..6))
        .map(|_| Ellipse {
            cx: rng.gen_range(0.0..fw),
            cy: rng.gen_range(0.0..fh),
            rx: rng.gen_range(0.05..0.35) * fw + 1.0,
            ry: rng.gen_range(0.05..0.35) * fh + 1.0,
        })
        .collect();
    let holes: Vec<Ellipse> = (0..rng.gen_range(0..6))
        .map(|_| {
            let b = blobs[rng.gen_range(0..blobs.len())];
            Ellipse {
                cx: b.cx + rng.gen_range(-0.5..0.5) * b.rx,
                cy: b.cy + rng.gen_range(-0.5..0.5) * b.ry,
                rx: rng.gen_range(0.1..0.4) * b.rx + 0.5,
                ry: rng.gen_range(0.1..0.4) * b.ry + 0.5,
            }
        })
        .collect();
    let specks: Vec<(u32, u32)> = (0..rng.gen_range(0..8)).map(|_| (rng.gen_range(0..w), rng.gen_range(0..h))).collect();
    TissueMask::from_fn(w, h, 1.0, |x, y| {
        let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        (blobs.iter().any(|e| e.contains(px, py)) && !holes.iter().any(|e| e.contains(px, py))) || specks.contains(&(x, y))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pyramid_levels_have_expected_sizes() {
        let shapes = SlideShapes { rects: vec![(100.0, 100.0, 200.0, 200.0)], ..Default::default() };
        let levels = render_pyramid(&shapes, (1000, 800), &[1, 4, 16], 1);
        let dims: Vec<_> = levels.iter().map(|l| l.dimensions()).collect();
        assert_eq!(dims, vec![(1000, 800), (250, 200), (62, 50)]);
        assert_eq!(levels[0].get_pixel(0, 0).0, BACKGROUND);
        assert_ne!(levels[0].get_pixel(150, 150).0, BACKGROUND);
    }

    #[test]
    fn blob_masks_are_deterministic() {
        let a = random_blob_mask(&mut ChaCha8Rng::seed_from_u64(3), 64, 48);
        let b = random_blob_mask(&mut ChaCha8Rng::seed_from_u64(3), 64, 48);
        assert_eq!(a, b);
        assert_eq!(a.dims(), (64, 48));
    }
}
