//! Crack-following border tracer.
//!
//! Borders are walked along pixel edges with tissue on the right-hand side
//! (image frame, y down). At a saddle corner the walk turns so that
//! diagonally touching tissue pixels stay in one border, which makes every
//! border separate one 8-connected tissue component from one 4-connected
//! background component. Outer borders come out with positive shoelace
//! area and hole borders with negative area.

use super::{polygon_area, ContourSet, Orientation, Region, Ring, Space};
use crate::mask::TissueMask;
use crate::morphology::{self, Connectivity};

/// Default fragment/hole area threshold in mask pixels.
pub fn default_min_area(mask: &TissueMask) -> f64 {
    (1e-4 * f64::from(mask.width) * f64::from(mask.height)).max(64.0)
}

struct Walker<'a> {
    mask: &'a TissueMask,
}

impl Walker<'_> {
    #[inline]
    fn fg(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.mask.width && (y as u32) < self.mask.height && self.mask.get(x as u32, y as u32)
    }

    /// Pixels ahead-left and ahead-right of vertex `(vx, vy)` when heading `d`.
    #[inline]
    fn ahead(&self, vx: i64, vy: i64, d: (i64, i64)) -> (bool, bool) {
        match d {
            (1, 0) => (self.fg(vx, vy - 1), self.fg(vx, vy)),
            (0, 1) => (self.fg(vx, vy), self.fg(vx - 1, vy)),
            (-1, 0) => (self.fg(vx - 1, vy), self.fg(vx - 1, vy - 1)),
            _ => (self.fg(vx - 1, vy - 1), self.fg(vx, vy - 1)),
        }
    }

    /// Walk the border that starts with the top edge of tissue pixel
    /// `(x, y)`, marking every top edge it passes in `seen`.
    fn walk(&self, x: i64, y: i64, seen: &mut [bool]) -> Vec<(f64, f64)> {
        let w = self.mask.width as usize;
        let start = (x, y);
        let mut d = (1i64, 0i64);
        let mut v = (x + 1, y);
        seen[y as usize * w + x as usize] = true;
        let mut vertices = Vec::new();
        loop {
            let (left, right) = self.ahead(v.0, v.1, d);
            let next = if left {
                (d.1, -d.0)
            } else if right {
                d
            } else {
                (-d.1, d.0)
            };
            if next != d {
                vertices.push((v.0 as f64, v.1 as f64));
            }
            if v == start && next == (1, 0) {
                break;
            }
            if next == (1, 0) {
                seen[v.1 as usize * w + v.0 as usize] = true;
            }
            d = next;
            v = (v.0 + d.0, v.1 + d.1);
        }
        vertices
    }
}

/// Trace every 8-connected tissue component into an exterior ring plus
/// hole rings. Components whose exterior area is below `min_area_px` are
/// dropped; holes below it are absorbed into tissue.
pub fn trace_contours(mask: &TissueMask, min_area_px: f64) -> ContourSet {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let cc = morphology::label(&mask.bits, w, h, 1, Connectivity::Eight);
    let mut exteriors: Vec<Option<Ring>> = vec![None; cc.count() + 1];
    let mut holes: Vec<Vec<Ring>> = vec![Vec::new(); cc.count() + 1];
    let walker = Walker { mask };
    let mut seen = vec![false; w * h];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask.bits[i] == 0 || seen[i] || (y > 0 && mask.bits[i - w] != 0) {
                continue;
            }
            let vertices = walker.walk(x as i64, y as i64, &mut seen);
            let area = polygon_area(&vertices);
            let label = cc.labels[i] as usize;
            if area > 0.0 {
                debug_assert!(exteriors[label].is_none(), "component {label} has two outer borders");
                exteriors[label] = Some(Ring::new(vertices, Orientation::Exterior));
            } else if -area >= min_area_px {
                holes[label].push(Ring::new(vertices, Orientation::Hole));
            }
        }
    }

    let regions = exteriors
        .into_iter()
        .zip(holes)
        .filter_map(|(ext, holes)| {
            let ext = ext?;
            (ext.area() >= min_area_px).then_some(Region { exterior: ext, holes })
        })
        .collect();
    ContourSet { regions, space: Space::Thumbnail, source_downsample: mask.thumb_downsample }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorize::{point_in_ring, rasterize};
    use proptest::prelude::*;

    fn blob(w: u32, h: u32, seed: u64, density: u64) -> TissueMask {
        let mut s = seed;
        let noise = TissueMask::from_fn(w, h, 1.0, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 33) % 10 < density
        });
        // smooth once so the mask has real blobs, holes and saddles
        let bits = morphology::close(&noise.bits, w as usize, h as usize, 2);
        TissueMask { bits, ..noise }
    }

    #[test]
    fn empty_mask_has_no_regions() {
        assert!(trace_contours(&TissueMask::zeros(10, 10, 1.0), 1.0).is_empty());
    }

    #[test]
    fn solid_block() {
        let m = TissueMask::from_fn(10, 10, 1.0, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        let cs = trace_contours(&m, 1.0);
        assert_eq!(cs.regions.len(), 1);
        let r = &cs.regions[0];
        assert!(r.holes.is_empty());
        assert_eq!(r.exterior.area(), 16.0);
        assert_eq!(r.exterior.vertices.len(), 4);
        assert_eq!(rasterize(&cs, (10, 10), 1.0).bits, m.bits);
    }

    #[test]
    fn block_with_hole() {
        let m = TissueMask::from_fn(20, 20, 1.0, |x, y| {
            let inside = (2..18).contains(&x) && (2..18).contains(&y);
            let hole = (7..13).contains(&x) && (7..13).contains(&y);
            inside && !hole
        });
        let cs = trace_contours(&m, 4.0);
        assert_eq!(cs.regions.len(), 1);
        assert_eq!(cs.regions[0].holes.len(), 1);
        assert_eq!(cs.regions[0].holes[0].area(), -36.0);
        assert_eq!(rasterize(&cs, (20, 20), 1.0).bits, m.bits);
        // hole smaller than the threshold is absorbed
        let cs = trace_contours(&m, 40.0);
        assert!(cs.regions[0].holes.is_empty());
    }

    #[test]
    fn diagonal_pixels_form_one_region() {
        let m = TissueMask::from_fn(4, 4, 1.0, |x, y| (x == 1 && y == 1) || (x == 2 && y == 2));
        let cs = trace_contours(&m, 0.0);
        assert_eq!(cs.regions.len(), 1);
        assert_eq!(cs.regions[0].exterior.area(), 2.0);
        assert_eq!(rasterize(&cs, (4, 4), 1.0).bits, m.bits);
    }

    #[test]
    fn island_inside_hole_is_its_own_region() {
        let m = TissueMask::from_fn(20, 20, 1.0, |x, y| {
            let ring = (1..19).contains(&x) && (1..19).contains(&y) && !((4..16).contains(&x) && (4..16).contains(&y));
            let island = (8..12).contains(&x) && (8..12).contains(&y);
            ring || island
        });
        let cs = trace_contours(&m, 1.0);
        assert_eq!(cs.regions.len(), 2);
        assert_eq!(rasterize(&cs, (20, 20), 1.0).bits, m.bits);
    }

    proptest! {
        #[test]
        fn exact_roundtrip_and_region_count(w in 1u32..48, h in 1u32..48, seed in any::<u64>(), density in 2u64..8) {
            let m = blob(w, h, seed, density);
            let cs = trace_contours(&m, 0.0);
            prop_assert_eq!(&rasterize(&cs, (w, h), 1.0).bits, &m.bits);
            let cc = morphology::label(&m.bits, w as usize, h as usize, 1, Connectivity::Eight);
            prop_assert_eq!(cs.regions.len(), cc.count());
            for r in &cs.regions {
                prop_assert!(r.exterior.area() > 0.0);
                for hole in &r.holes {
                    prop_assert!(hole.area() < 0.0);
                    for &v in &hole.vertices {
                        prop_assert!(point_in_ring(&r.exterior.vertices, v));
                    }
                }
            }
        }
    }
}
