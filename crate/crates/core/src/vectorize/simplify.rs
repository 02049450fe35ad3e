use super::{Point, Ring};

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn douglas_peucker(pts: &[Point], tol: f64, keep: &mut [bool]) {
    let (mut stack, last) = (vec![(0usize, pts.len() - 1)], pts.len() - 1);
    keep[0] = true;
    keep[last] = true;
    while let Some((a, b)) = stack.pop() {
        let mut best = (0usize, 0.0f64);
        for i in a + 1..b {
            let d = seg_dist(pts[i], pts[a], pts[b]);
            if d > best.1 {
                best = (i, d);
            }
        }
        if best.1 > tol {
            keep[best.0] = true;
            stack.push((a, best.0));
            stack.push((best.0, b));
        }
    }
}

/// Douglas-Peucker simplification of a closed ring. The ring is split at
/// the vertex farthest from the first one; at least three vertices are kept.
pub fn simplify_ring(ring: &Ring, tolerance: f64) -> Ring {
    let v = &ring.vertices;
    if v.len() <= 3 || tolerance <= 0.0 {
        return ring.clone();
    }
    let far = (1..v.len())
        .max_by(|&i, &j| {
            let di = (v[i].0 - v[0].0).powi(2) + (v[i].1 - v[0].1).powi(2);
            let dj = (v[j].0 - v[0].0).powi(2) + (v[j].1 - v[0].1).powi(2);
            di.total_cmp(&dj)
        })
        .unwrap();
    let mut closed: Vec<Point> = v.clone();
    closed.push(v[0]);
    let mut keep = vec![false; closed.len()];
    douglas_peucker(&closed[..=far], tolerance, &mut keep[..=far]);
    douglas_peucker(&closed[far..], tolerance, &mut keep[far..]);
    let mut out: Vec<Point> = closed[..v.len()].iter().zip(&keep).filter(|(_, &k)| k).map(|(&p, _)| p).collect();
    if out.len() < 3 {
        // degenerate after simplification; fall back to the three extreme vertices
        let mid = far / 2;
        out = vec![v[0], v[mid.max(1)], v[far]];
    }
    Ring::new(out, ring.orientation)
}
