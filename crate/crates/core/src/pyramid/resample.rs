//! Box (area-averaging) resampling.

use image::RgbImage;

/// Per output sample: first source index and the coverage weight of each
/// contributing source sample. Weights sum to 1.
fn axis_weights(src: u32, dst: u32) -> Vec<(usize, Vec<f32>)> {
    let scale = f64::from(src) / f64::from(dst);
    (0..dst)
        .map(|o| {
            let lo = f64::from(o) * scale;
            let hi = (f64::from(o) + 1.0) * scale;
            let first = lo.floor() as usize;
            let last = ((hi.ceil() as usize).min(src as usize)).max(first + 1);
            let mut weights: Vec<f32> = (first..last)
                .map(|s| {
                    let a = lo.max(s as f64);
                    let b = hi.min(s as f64 + 1.0);
                    (b - a).max(0.0) as f32
                })
                .collect();
            let total: f32 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            (first, weights)
        })
        .collect()
}

/// Resize by averaging the source area each output pixel covers.
pub fn area_resize(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    assert!(width > 0 && height > 0, "resize target must be non-empty");
    if src.dimensions() == (width, height) {
        return src.clone();
    }
    let (sw, sh) = src.dimensions();
    let xw = axis_weights(sw, width);
    let yw = axis_weights(sh, height);
    let raw = src.as_raw();
    let sstride = sw as usize * 3;

    // horizontal pass: sh rows x width columns
    let mut tmp = vec![0f32; sh as usize * width as usize * 3];
    for row in 0..sh as usize {
        let srow = &raw[row * sstride..(row + 1) * sstride];
        let trow = &mut tmp[row * width as usize * 3..(row + 1) * width as usize * 3];
        for (ox, (first, ws)) in xw.iter().enumerate() {
            let mut acc = [0f32; 3];
            for (k, w) in ws.iter().enumerate() {
                let p = &srow[(first + k) * 3..(first + k) * 3 + 3];
                acc[0] += w * f32::from(p[0]);
                acc[1] += w * f32::from(p[1]);
                acc[2] += w * f32::from(p[2]);
            }
            trow[ox * 3..ox * 3 + 3].copy_from_slice(&acc);
        }
    }

    let tstride = width as usize * 3;
    let mut out = vec![0u8; height as usize * tstride];
    let mut acc = vec![0f32; tstride];
    for (oy, (first, ws)) in yw.iter().enumerate() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (k, w) in ws.iter().enumerate() {
            let trow = &tmp[(first + k) * tstride..(first + k + 1) * tstride];
            for (a, t) in acc.iter_mut().zip(trow) {
                *a += w * t;
            }
        }
        for (o, a) in out[oy * tstride..(oy + 1) * tstride].iter_mut().zip(&acc) {
            *o = a.round().clamp(0.0, 255.0) as u8;
        }
    }
    RgbImage::from_raw(width, height, out).expect("resize buffer size")
}
