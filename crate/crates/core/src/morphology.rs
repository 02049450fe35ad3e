//! Binary morphology and connected components on row-major 0/1 rasters.
//!
//! Structuring elements are squares. Pixels outside the raster never
//! contribute to a dilation and never block an erosion.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Count of ones in `line[i+lo ..= i+hi]` (clipped) compared against
/// `want_all`: any-one when false, all-ones when true.
fn window_pass(line: &[u8], out: &mut [u8], lo: isize, hi: isize, want_all: bool) {
    let n = line.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u32);
    for &v in line {
        prefix.push(prefix.last().unwrap() + u32::from(v != 0));
    }
    for (i, o) in out.iter_mut().enumerate() {
        let a = (i as isize + lo).clamp(0, n as isize) as usize;
        let b = ((i as isize + hi + 1).clamp(0, n as isize)) as usize;
        let ones = prefix[b] - prefix[a];
        *o = u8::from(if want_all { ones as usize == b - a } else { ones > 0 });
    }
}

fn separable(bits: &[u8], w: usize, h: usize, lo: isize, hi: isize, want_all: bool) -> Vec<u8> {
    let mut tmp = vec![0u8; bits.len()];
    for y in 0..h {
        window_pass(&bits[y * w..(y + 1) * w], &mut tmp[y * w..(y + 1) * w], lo, hi, want_all);
    }
    let mut out = vec![0u8; bits.len()];
    let mut col = vec![0u8; h];
    let mut res = vec![0u8; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        window_pass(&col, &mut res, lo, hi, want_all);
        for y in 0..h {
            out[y * w + x] = res[y];
        }
    }
    out
}

/// Structuring element offsets `-a ..= k-1-a` with anchor `a = k/2`.
fn offsets(k: usize) -> (isize, isize) {
    let a = (k / 2) as isize;
    (-a, k as isize - 1 - a)
}

pub fn dilate(bits: &[u8], w: usize, h: usize, k: usize) -> Vec<u8> {
    if k <= 1 {
        return bits.to_vec();
    }
    // y is set iff y - b hits a one for some offset b
    let (blo, bhi) = offsets(k);
    separable(bits, w, h, -bhi, -blo, false)
}

pub fn erode(bits: &[u8], w: usize, h: usize, k: usize) -> Vec<u8> {
    if k <= 1 {
        return bits.to_vec();
    }
    let (blo, bhi) = offsets(k);
    separable(bits, w, h, blo, bhi, true)
}

pub fn close(bits: &[u8], w: usize, h: usize, k: usize) -> Vec<u8> {
    erode(&dilate(bits, w, h, k), w, h, k)
}

/// Square of side `2r+1` centred on each pixel.
pub fn dilate_radius(bits: &[u8], w: usize, h: usize, r: usize) -> Vec<u8> {
    dilate(bits, w, h, 2 * r + 1)
}

pub fn erode_radius(bits: &[u8], w: usize, h: usize, r: usize) -> Vec<u8> {
    erode(bits, w, h, 2 * r + 1)
}

/// Connected components of pixels equal to `value`.
#[derive(Debug, Clone)]
pub struct Components {
    /// 0 for pixels not equal to `value`, else component id starting at 1.
    pub labels: Vec<u32>,
    /// Pixel count per component; index 0 unused.
    pub areas: Vec<usize>,
    pub touches_border: Vec<bool>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.areas.len() - 1
    }
}

pub fn label(bits: &[u8], w: usize, h: usize, value: u8, conn: Connectivity) -> Components {
    let mut labels = vec![0u32; bits.len()];
    let mut areas = vec![0usize];
    let mut touches = vec![false];
    let mut stack = Vec::new();
    let want = value != 0;
    for start in 0..bits.len() {
        if (bits[start] != 0) != want || labels[start] != 0 {
            continue;
        }
        let id = areas.len() as u32;
        let mut area = 0usize;
        let mut border = false;
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            if x == 0 || y == 0 || x as usize == w - 1 || y as usize == h - 1 {
                border = true;
            }
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dx == 0 && dy == 0) || (conn == Connectivity::Four && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if (bits[j] != 0) == want && labels[j] == 0 {
                        labels[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
        touches.push(border);
    }
    Components { labels, areas, touches_border: touches }
}

/// Clear 8-connected foreground components with fewer than `min_px` pixels.
pub fn remove_small_objects(bits: &mut [u8], w: usize, h: usize, min_px: usize) {
    if min_px == 0 {
        return;
    }
    let cc = label(bits, w, h, 1, Connectivity::Eight);
    for (b, &l) in bits.iter_mut().zip(&cc.labels) {
        if l != 0 && cc.areas[l as usize] < min_px {
            *b = 0;
        }
    }
}

/// Fill 4-connected background components that do not touch the raster
/// border and have fewer than `max_px` pixels.
pub fn fill_small_holes(bits: &mut [u8], w: usize, h: usize, max_px: usize) {
    if max_px == 0 {
        return;
    }
    let cc = label(bits, w, h, 0, Connectivity::Four);
    for (b, &l) in bits.iter_mut().zip(&cc.labels) {
        if l != 0 && !cc.touches_border[l as usize] && cc.areas[l as usize] < max_px {
            *b = 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_dilate(bits: &[u8], w: usize, h: usize, k: usize) -> Vec<u8> {
        let (lo, hi) = offsets(k);
        let mut out = vec![0; bits.len()];
        for y in 0..h as isize {
            for x in 0..w as isize {
                if bits[y as usize * w + x as usize] == 0 {
                    continue;
                }
                for by in lo..=hi {
                    for bx in lo..=hi {
                        let (nx, ny) = (x + bx, y + by);
                        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                            out[ny as usize * w + nx as usize] = 1;
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo_random(w: usize, h: usize, seed: u64) -> Vec<u8> {
        let mut s = seed;
        (0..w * h)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                u8::from((s >> 33) % 5 == 0)
            })
            .collect()
    }

    #[test]
    fn dilation_matches_brute_force() {
        for k in [2, 3, 4, 5] {
            for seed in 0..4 {
                let bits = pseudo_random(23, 17, seed);
                assert_eq!(dilate(&bits, 23, 17, k), brute_dilate(&bits, 23, 17, k), "k={k}");
            }
        }
    }

    #[test]
    fn closing_is_extensive_and_idempotent() {
        for k in [2, 3, 4, 7] {
            let bits = pseudo_random(31, 29, k as u64);
            let c = close(&bits, 31, 29, k);
            assert!(bits.iter().zip(&c).all(|(a, b)| a <= b));
            assert_eq!(close(&c, 31, 29, k), c);
        }
    }

    #[test]
    fn labels_respect_connectivity() {
        // diagonal pair
        let bits = [1, 0, 0, 1];
        assert_eq!(label(&bits, 2, 2, 1, Connectivity::Eight).count(), 1);
        assert_eq!(label(&bits, 2, 2, 1, Connectivity::Four).count(), 2);
        assert_eq!(label(&bits, 2, 2, 0, Connectivity::Four).count(), 2);
    }

    #[test]
    fn speck_removal_and_hole_fill() {
        let (w, h) = (100, 100);
        let mut bits = vec![0u8; w * h];
        for y in 10..60 {
            for x in 10..60 {
                bits[y * w + x] = 1;
            }
        }
        for y in 80..82 {
            for x in 80..82 {
                bits[y * w + x] = 1;
            }
        }
        remove_small_objects(&mut bits, w, h, 16);
        assert_eq!(bits.iter().filter(|&&b| b == 1).count(), 2500);

        let (w, h) = (20, 20);
        let mut bits = vec![1u8; w * h];
        for y in 8..11 {
            for x in 8..11 {
                bits[y * w + x] = 0;
            }
        }
        fill_small_holes(&mut bits, w, h, 16);
        assert!(bits.iter().all(|&b| b == 1));
    }
}
