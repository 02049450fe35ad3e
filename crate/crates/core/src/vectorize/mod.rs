//! Polygonal contours with explicit holes.
//!
//! Rings traced from masks run along pixel edges, so every vertex sits on a
//! pixel corner and a pixel centre is never on a ring. Exterior rings have
//! positive signed area, hole rings negative.

mod geojson;
mod simplify;
mod trace;

use serde::{Deserialize, Serialize};

use crate::mask::TissueMask;
pub use geojson::{contours_from_geojson, contours_to_geojson};
pub use simplify::simplify_ring;
pub use trace::{default_min_area, trace_contours};

pub type Point = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Counter-clockwise, positive shoelace area.
    Exterior,
    /// Clockwise, negative shoelace area.
    Hole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    pub vertices: Vec<Point>,
    pub orientation: Orientation,
}

impl Ring {
    pub fn new(vertices: Vec<Point>, orientation: Orientation) -> Self {
        Self { vertices, orientation }
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    pub fn bbox(&self) -> BBox {
        BBox::of(&self.vertices)
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_ring(&self.vertices, p)
    }

    pub fn locate(&self, p: Point) -> Location {
        locate_in_ring(&self.vertices, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Inside,
    Boundary,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn of(points: &[Point]) -> Self {
        let mut b = BBox { min_x: f64::INFINITY, min_y: f64::INFINITY, max_x: f64::NEG_INFINITY, max_y: f64::NEG_INFINITY };
        for &(x, y) in points {
            b.min_x = b.min_x.min(x);
            b.min_y = b.min_y.min(y);
            b.max_x = b.max_x.max(x);
            b.max_y = b.max_y.max(y);
        }
        b
    }

    pub fn contains(&self, (x, y): Point) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        self.exterior.bbox().contains(p)
            && self.exterior.contains(p)
            && !self.holes.iter().any(|h| h.locate(p) == Location::Inside)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Thumbnail,
    Level0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub regions: Vec<Region>,
    pub space: Space,
    /// Thumbnail-to-level-0 factor of the mask the contours came from.
    pub source_downsample: f64,
}

impl ContourSet {
    pub fn empty(space: Space, source_downsample: f64) -> Self {
        Self { regions: Vec::new(), space, source_downsample }
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Multiply every vertex by `factor` and relabel the coordinate space.
    pub fn scaled(&self, factor: f64, space: Space) -> Self {
        let scale = |r: &Ring| Ring {
            vertices: r.vertices.iter().map(|&(x, y)| (x * factor, y * factor)).collect(),
            orientation: r.orientation,
        };
        Self {
            regions: self
                .regions
                .iter()
                .map(|reg| Region { exterior: scale(&reg.exterior), holes: reg.holes.iter().map(scale).collect() })
                .collect(),
            space,
            source_downsample: self.source_downsample,
        }
    }

    pub fn index(&self) -> ContourIndex {
        ContourIndex::new(self)
    }
}

/// Signed shoelace area; positive for counter-clockwise rings in a y-up frame.
pub fn polygon_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let (x0, y0) = vertices[i];
        let (x1, y1) = vertices[(i + 1) % n];
        twice += x0 * y1 - x1 * y0;
    }
    0.5 * twice
}

#[inline]
fn on_segment(a: Point, b: Point, p: Point) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let cross = dx * (p.1 - a.1) - dy * (p.0 - a.0);
    let tol = 1e-9 * (dx.abs() + dy.abs()) * (1.0 + p.0.abs() + p.1.abs());
    cross.abs() <= tol
        && p.0 >= a.0.min(b.0) - 1e-9
        && p.0 <= a.0.max(b.0) + 1e-9
        && p.1 >= a.1.min(b.1) - 1e-9
        && p.1 <= a.1.max(b.1) + 1e-9
}

#[inline]
fn crosses_ray(a: Point, b: Point, p: Point) -> bool {
    if (a.1 > p.1) != (b.1 > p.1) {
        let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
        p.0 < x
    } else {
        false
    }
}

/// Even-odd ray casting with edge detection.
pub fn locate_in_ring(vertices: &[Point], p: Point) -> Location {
    let n = vertices.len();
    let mut inside = false;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        if on_segment(a, b, p) {
            return Location::Boundary;
        }
        if crosses_ray(a, b, p) {
            inside = !inside;
        }
    }
    if inside {
        Location::Inside
    } else {
        Location::Outside
    }
}

/// Even-odd ray casting; points on an edge count as inside.
pub fn point_in_ring(vertices: &[Point], p: Point) -> bool {
    locate_in_ring(vertices, p) != Location::Outside
}

/// True iff `p` is inside some region's exterior and not strictly inside
/// any of that region's holes. Points on any ring edge count as tissue.
pub fn point_in_region(cs: &ContourSet, p: Point) -> bool {
    cs.regions.iter().any(|r| r.contains(p))
}

pub fn scale_contours(cs: &ContourSet, factor: f64) -> ContourSet {
    cs.scaled(factor, Space::Level0)
}

/// Pixel `(i, j)` is set iff `((i + 0.5) * scale, (j + 0.5) * scale)` is in a region.
pub fn rasterize(cs: &ContourSet, dims: (u32, u32), scale: f64) -> TissueMask {
    let index = cs.index();
    let factor = match cs.space {
        Space::Level0 => scale,
        Space::Thumbnail => cs.source_downsample * scale,
    };
    TissueMask::from_fn(dims.0, dims.1, factor, |i, j| {
        index.contains(((f64::from(i) + 0.5) * scale, (f64::from(j) + 0.5) * scale))
    })
}

/// Ring edges bucketed into horizontal bands for fast point queries.
#[derive(Debug, Clone)]
struct RingIndex {
    min_y: f64,
    band_h: f64,
    bands: Vec<Vec<(Point, Point)>>,
}

impl RingIndex {
    fn new(vertices: &[Point]) -> Self {
        let bb = BBox::of(vertices);
        let n = vertices.len();
        let nb = (n / 4).clamp(1, 4096);
        let band_h = ((bb.max_y - bb.min_y) / nb as f64).max(f64::MIN_POSITIVE);
        let mut bands = vec![Vec::new(); nb];
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let lo = (((a.1.min(b.1) - bb.min_y) / band_h).floor().max(0.0) as usize).min(nb - 1);
            let hi = (((a.1.max(b.1) - bb.min_y) / band_h).floor().max(0.0) as usize).min(nb - 1);
            for band in &mut bands[lo..=hi] {
                band.push((a, b));
            }
        }
        Self { min_y: bb.min_y, band_h, bands }
    }

    fn locate(&self, p: Point) -> Location {
        let nb = self.bands.len();
        let band = ((p.1 - self.min_y) / self.band_h).floor();
        if band < -1.0 || band > nb as f64 {
            return Location::Outside;
        }
        let band = (band.max(0.0) as usize).min(nb - 1);
        let mut inside = false;
        for &(a, b) in &self.bands[band] {
            if on_segment(a, b, p) {
                return Location::Boundary;
            }
            if crosses_ray(a, b, p) {
                inside = !inside;
            }
        }
        if inside {
            Location::Inside
        } else {
            Location::Outside
        }
    }
}

#[derive(Debug, Clone)]
struct RegionIndex {
    bbox: BBox,
    exterior: RingIndex,
    holes: Vec<(BBox, RingIndex)>,
}

/// Query structure equivalent to [`point_in_region`] over a fixed set.
#[derive(Debug, Clone)]
pub struct ContourIndex {
    regions: Vec<RegionIndex>,
}

impl ContourIndex {
    pub fn new(cs: &ContourSet) -> Self {
        Self {
            regions: cs
                .regions
                .iter()
                .map(|r| RegionIndex {
                    bbox: r.exterior.bbox(),
                    exterior: RingIndex::new(&r.exterior.vertices),
                    holes: r.holes.iter().map(|h| (h.bbox(), RingIndex::new(&h.vertices))).collect(),
                })
                .collect(),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.regions.iter().any(|r| {
            r.bbox.contains(p)
                && r.exterior.locate(p) != Location::Outside
                && !r.holes.iter().any(|(bb, h)| bb.contains(p) && h.locate(p) == Location::Inside)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point> {
        vec![(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]
    }

    #[test]
    fn shoelace_examples() {
        assert_eq!(polygon_area(&square(0.0, 0.0, 1.0)), 1.0);
        let mut cw = square(0.0, 0.0, 1.0);
        cw.reverse();
        assert_eq!(polygon_area(&cw), -1.0);
        assert_eq!(polygon_area(&[(0.0, 0.0), (4.0, 0.0), (0.0, 3.0)]), 6.0);
    }

    fn holed_set() -> ContourSet {
        let mut hole = square(4.0, 4.0, 2.0);
        hole.reverse();
        ContourSet {
            regions: vec![Region {
                exterior: Ring::new(square(0.0, 0.0, 10.0), Orientation::Exterior),
                holes: vec![Ring::new(hole, Orientation::Hole)],
            }],
            space: Space::Thumbnail,
            source_downsample: 1.0,
        }
    }

    #[test]
    fn point_queries() {
        let cs = holed_set();
        assert!(point_in_region(&cs, (2.0, 2.0)));
        assert!(!point_in_region(&cs, (5.0, 5.0)));
        assert!(!point_in_region(&cs, (11.0, 5.0)));
        // edges are inclusive, hole edges included
        assert!(point_in_region(&cs, (0.0, 5.0)));
        assert!(point_in_region(&cs, (10.0, 10.0)));
        assert!(point_in_region(&cs, (4.0, 5.0)));
        let idx = cs.index();
        for p in [(2.0, 2.0), (5.0, 5.0), (11.0, 5.0), (0.0, 5.0), (10.0, 10.0), (4.0, 5.0), (4.0, 4.0)] {
            assert_eq!(idx.contains(p), point_in_region(&cs, p), "{p:?}");
        }
    }

    #[test]
    fn rasterize_examples() {
        let empty = ContourSet::empty(Space::Thumbnail, 1.0);
        assert!(rasterize(&empty, (8, 8), 1.0).is_empty());
        let full = ContourSet {
            regions: vec![Region { exterior: Ring::new(square(0.0, 0.0, 8.0), Orientation::Exterior), holes: vec![] }],
            space: Space::Thumbnail,
            source_downsample: 1.0,
        };
        assert_eq!(rasterize(&full, (8, 8), 1.0).count_ones(), 64);
        let m = rasterize(&holed_set(), (10, 10), 1.0);
        assert_eq!(m.count_ones(), 96);
        assert!(!m.get(4, 4) && !m.get(5, 5) && m.get(3, 4));
    }

    #[test]
    fn scaling_vertices() {
        let cs = ContourSet {
            regions: vec![Region {
                exterior: Ring::new(vec![(10.0, 20.0), (30.0, 20.0), (30.0, 40.0)], Orientation::Exterior),
                holes: vec![],
            }],
            space: Space::Thumbnail,
            source_downsample: 32.0,
        };
        let s = scale_contours(&cs, 32.0);
        assert_eq!(s.space, Space::Level0);
        assert_eq!(s.regions[0].exterior.vertices[0], (320.0, 640.0));
        assert_eq!(s.regions[0].exterior.orientation, Orientation::Exterior);
        assert_eq!(scale_contours(&cs, 1.0).regions, cs.regions);
    }

    proptest! {
        #[test]
        fn area_scales_quadratically(pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..20), f in 0.1f64..50.0) {
            let ring = Ring::new(pts, Orientation::Exterior);
            let cs = ContourSet { regions: vec![Region { exterior: ring.clone(), holes: vec![] }], space: Space::Thumbnail, source_downsample: 1.0 };
            let s = cs.scaled(f, Space::Level0);
            let a = ring.area();
            prop_assert!((s.regions[0].exterior.area() - a * f * f).abs() <= 1e-9 * (1.0 + (a * f * f).abs()));
            let back = s.scaled(1.0 / f, Space::Thumbnail);
            for (p, q) in back.regions[0].exterior.vertices.iter().zip(&ring.vertices) {
                prop_assert!((p.0 - q.0).abs() <= 1e-9 && (p.1 - q.1).abs() <= 1e-9);
            }
        }

        #[test]
        fn index_agrees_with_direct_test(pts in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0), 3..40), probes in proptest::collection::vec((-5.0f64..55.0, -5.0f64..55.0), 50)) {
            let cs = ContourSet { regions: vec![Region { exterior: Ring::new(pts, Orientation::Exterior), holes: vec![] }], space: Space::Level0, source_downsample: 1.0 };
            let idx = cs.index();
            for p in probes {
                prop_assert_eq!(idx.contains(p), point_in_region(&cs, p));
            }
        }
    }
}
