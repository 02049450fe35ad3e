//! QC renderings in thumbnail space.

use image::Rgb;

use crate::grid::PatchCoords;
use crate::mask::TissueMask;
use crate::pyramid::RgbImage;
use crate::vectorize::{ContourSet, Ring, Space};

pub const MASK_ALPHA: f64 = 0.4;
pub const MASK_TINT: [u8; 3] = [0, 255, 0];
pub const EXTERIOR_COLOR: [u8; 3] = [0, 200, 0];
pub const HOLE_COLOR: [u8; 3] = [230, 0, 0];
pub const GRID_COLOR: [u8; 3] = [0, 0, 255];

#[derive(Debug, Clone, PartialEq)]
pub struct Overlays {
    pub mask: RgbImage,
    pub contour: RgbImage,
    pub grid: RgbImage,
}

pub fn mask_overlay(thumb: &RgbImage, mask: &TissueMask) -> RgbImage {
    let mut out = thumb.clone();
    for (p, &b) in out.pixels_mut().zip(&mask.bits) {
        if b != 0 {
            for c in 0..3 {
                let v = (1.0 - MASK_ALPHA) * f64::from(p.0[c]) + MASK_ALPHA * f64::from(MASK_TINT[c]);
                p.0[c] = v.round() as u8;
            }
        }
    }
    out
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && x < i64::from(img.width()) && y < i64::from(img.height()) {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn draw_ring(img: &mut RgbImage, ring: &Ring, scale: f64, color: [u8; 3]) {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    // vertices sit on pixel corners; clamp the far edge onto the last pixel
    let to_px = |(x, y): (f64, f64)| ((x / scale).floor().min((w - 1) as f64) as i64, (y / scale).floor().min((h - 1) as f64) as i64);
    let n = ring.vertices.len();
    for i in 0..n {
        line(img, to_px(ring.vertices[i]), to_px(ring.vertices[(i + 1) % n]), color);
    }
}

pub fn contour_overlay(thumb: &RgbImage, cs: &ContourSet, thumb_downsample: f64) -> RgbImage {
    let scale = if cs.space == Space::Level0 { thumb_downsample } else { 1.0 };
    let mut out = thumb.clone();
    for r in &cs.regions {
        draw_ring(&mut out, &r.exterior, scale, EXTERIOR_COLOR);
        for hole in &r.holes {
            draw_ring(&mut out, hole, scale, HOLE_COLOR);
        }
    }
    out
}

/// Thumbnail rectangle `(x, y, side)` of each patch footprint.
pub fn grid_rects(pc: &PatchCoords, thumb_downsample: f64) -> Vec<(i64, i64, i64)> {
    let side = ((f64::from(pc.plan.level0_footprint_px) / thumb_downsample).round() as i64).max(1);
    pc.coords
        .iter()
        .map(|&(x, y)| ((x as f64 / thumb_downsample).floor() as i64, (y as f64 / thumb_downsample).floor() as i64, side))
        .collect()
}

pub fn grid_overlay(thumb: &RgbImage, pc: &PatchCoords, thumb_downsample: f64) -> RgbImage {
    let mut out = thumb.clone();
    for (x, y, s) in grid_rects(pc, thumb_downsample) {
        let (x1, y1) = (x + s - 1, y + s - 1);
        line(&mut out, (x, y), (x1, y), GRID_COLOR);
        line(&mut out, (x1, y), (x1, y1), GRID_COLOR);
        line(&mut out, (x1, y1), (x, y1), GRID_COLOR);
        line(&mut out, (x, y1), (x, y), GRID_COLOR);
    }
    out
}

pub fn render_overlays(thumb: &RgbImage, mask: &TissueMask, cs: &ContourSet, pc: Option<&PatchCoords>) -> Overlays {
    let ds = mask.thumb_downsample;
    Overlays {
        mask: mask_overlay(thumb, mask),
        contour: contour_overlay(thumb, cs, ds),
        grid: pc.map(|pc| grid_overlay(thumb, pc, ds)).unwrap_or_else(|| thumb.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{AcceptMode, ReadPlan};
    use crate::vectorize::{trace_contours, Orientation, Region};

    fn thumb() -> RgbImage {
        RgbImage::from_fn(64, 64, |x, y| Rgb([x as u8 * 3, y as u8 * 3, 200]))
    }

    #[test]
    fn mask_tint() {
        let t = thumb();
        assert_eq!(mask_overlay(&t, &TissueMask::zeros(64, 64, 16.0)), t);
        let full = mask_overlay(&RgbImage::from_pixel(64, 64, Rgb([100, 100, 100])), &TissueMask::ones(64, 64, 16.0));
        assert!(full.pixels().all(|p| p.0 == [60, 162, 60]));
    }

    #[test]
    fn contour_colors() {
        let m = TissueMask::from_fn(64, 64, 16.0, |x, y| {
            (8..56).contains(&x) && (8..56).contains(&y) && !((24..40).contains(&x) && (24..40).contains(&y))
        });
        let cs = trace_contours(&m, 1.0).scaled(16.0, Space::Level0);
        let img = contour_overlay(&RgbImage::new(64, 64), &cs, 16.0);
        assert_eq!(img.get_pixel(8, 8).0, EXTERIOR_COLOR);
        assert_eq!(img.get_pixel(30, 24).0, HOLE_COLOR);
        assert_eq!(img.get_pixel(16, 16).0, [0, 0, 0]);
    }

    #[test]
    fn grid_rectangles_at_downscaled_positions() {
        let plan = ReadPlan {
            target_magnification: 20.0,
            objective_power: 20.0,
            patch_size_px: 128,
            overlap_px: 0,
            level: 0,
            read_size_at_level_px: 128,
            level0_footprint_px: 128,
            resize_needed: false,
        };
        let coords: Vec<(i64, i64)> = (0..4).flat_map(|j| (0..4).map(move |i| (128 + i * 128, 128 + j * 128))).collect();
        let pc = PatchCoords { slide_id: "s".into(), coords, plan, accept_mode: AcceptMode::CenterOnly };
        let rects = grid_rects(&pc, 16.0);
        assert_eq!(rects.len(), 16);
        assert_eq!(rects[5], (16, 16, 8));
        let img = grid_overlay(&RgbImage::new(64, 64), &pc, 16.0);
        for &(x, y, s) in &rects {
            for (px, py) in [(x, y), (x + s - 1, y), (x, y + s - 1), (x + s - 1, y + s - 1)] {
                assert_eq!(img.get_pixel(px as u32, py as u32).0, GRID_COLOR);
            }
            assert_eq!(img.get_pixel((x + s / 2) as u32, (y + s / 2) as u32).0, [0, 0, 0]);
        }
        let cs = ContourSet {
            regions: vec![Region {
                exterior: Ring::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)], Orientation::Exterior),
                holes: vec![],
            }],
            space: Space::Thumbnail,
            source_downsample: 16.0,
        };
        let o = render_overlays(&thumb(), &TissueMask::zeros(64, 64, 16.0), &cs, None);
        assert_eq!(o.grid, thumb());
    }
}
