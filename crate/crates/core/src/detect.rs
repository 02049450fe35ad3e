//! Thumbnail tissue detection.
//!
//! Two providers produce a [`TissueMask`]: a classical HSV-saturation
//! threshold detector, and ingestion of masks computed elsewhere (for example
//! by a trained segmentation model). Both share [`morphological_cleanup`].

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::TissueMask;
use crate::morphology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Otsu,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Odd side length of the median filter.
    pub median_kernel_px: u32,
    pub threshold_mode: ThresholdMode,
    pub fixed_threshold: u8,
    pub close_kernel_px: u32,
    pub min_object_px: u32,
    pub max_hole_px: u32,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            median_kernel_px: 7,
            threshold_mode: ThresholdMode::Otsu,
            fixed_threshold: 8,
            close_kernel_px: 4,
            min_object_px: 16,
            max_hole_px: 16,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.median_kernel_px == 0 || self.median_kernel_px % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "median kernel must be odd and >= 1, got {}",
                self.median_kernel_px
            )));
        }
        Ok(())
    }
}

/// A mask plus any non-fatal condition met while producing it.
#[derive(Debug, Clone)]
pub struct Detection {
    pub mask: TissueMask,
    pub warning: Option<String>,
}

impl Detection {
    fn warn(mask: TissueMask, msg: String) -> Self {
        log::warn!("{msg}");
        Self { mask, warning: Some(msg) }
    }
}

/// HSV saturation on the 0-255 scale: `255 * (max - min) / max`.
pub fn saturation(img: &RgbImage) -> Vec<u8> {
    img.pixels()
        .map(|p| {
            let max = p[0].max(p[1]).max(p[2]);
            let min = p[0].min(p[1]).min(p[2]);
            if max == 0 {
                0
            } else {
                ((u32::from(max - min) * 255 + u32::from(max) / 2) / u32::from(max)) as u8
            }
        })
        .collect()
}

/// Median filter with a `k`x`k` window and replicated borders.
pub fn median_filter(src: &[u8], w: usize, h: usize, k: usize) -> Vec<u8> {
    assert!(k % 2 == 1, "median kernel must be odd");
    if k == 1 || src.is_empty() {
        return src.to_vec();
    }
    let r = (k / 2) as isize;
    let rank = (k * k / 2) as u32;
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        let rows: Vec<usize> = (-r..=r).map(|d| clamp_y(y as isize + d) * w).collect();
        let mut hist = [0u32; 256];
        for dx in -r..=r {
            let cx = clamp_x(dx);
            for &row in &rows {
                hist[src[row + cx] as usize] += 1;
            }
        }
        // lt = number of window values strictly below med
        let mut med = 0usize;
        let mut lt = 0u32;
        while lt + hist[med] <= rank {
            lt += hist[med];
            med += 1;
        }
        out[y * w] = med as u8;
        for x in 1..w {
            let gone = clamp_x(x as isize - r - 1);
            let new = clamp_x(x as isize + r);
            for &row in &rows {
                let v = src[row + gone] as usize;
                hist[v] -= 1;
                if v < med {
                    lt -= 1;
                }
                let v = src[row + new] as usize;
                hist[v] += 1;
                if v < med {
                    lt += 1;
                }
            }
            while lt > rank {
                med -= 1;
                lt -= hist[med];
            }
            while lt + hist[med] <= rank {
                lt += hist[med];
                med += 1;
            }
            out[y * w + x] = med as u8;
        }
    }
    out
}

/// Otsu threshold: the `t` maximizing between-class variance of the
/// split `{v <= t}` / `{v > t}`. `None` when all values are equal.
pub fn otsu_threshold(values: &[u8]) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0f64, 0f64);
    let mut best = (0u8, f64::MIN);
    for t in 0..256 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.1 {
            best = (t as u8, between);
        }
    }
    Some(best.0)
}

/// Classical detector: saturation, median filter, threshold (tissue is
/// above the threshold), then [`morphological_cleanup`].
pub fn detect_hsv_otsu(thumb: &RgbImage, params: &DetectorParams, thumb_downsample: f64) -> Result<Detection> {
    params.validate()?;
    let (w, h) = thumb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::InvalidParam("empty thumbnail".into()));
    }
    let sat = saturation(thumb);
    let filtered = median_filter(&sat, w as usize, h as usize, params.median_kernel_px as usize);
    let threshold = match params.threshold_mode {
        ThresholdMode::Fixed => params.fixed_threshold,
        ThresholdMode::Otsu => match otsu_threshold(&filtered) {
            Some(t) => t,
            None => {
                return Ok(Detection::warn(
                    TissueMask::zeros(w, h, thumb_downsample),
                    "saturation has zero variance; Otsu is undefined, returning an empty mask".into(),
                ))
            }
        },
    };
    let bits = filtered.iter().map(|&v| u8::from(v > threshold)).collect();
    let mask = TissueMask { width: w, height: h, bits, thumb_downsample };
    Ok(Detection { mask: morphological_cleanup(&mask, params), warning: None })
}

/// Closing, small-object removal (8-connected), then small-hole filling
/// (4-connected background not touching the border).
pub fn morphological_cleanup(mask: &TissueMask, params: &DetectorParams) -> TissueMask {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut bits = morphology::close(&mask.bits, w, h, params.close_kernel_px as usize);
    morphology::remove_small_objects(&mut bits, w, h, params.min_object_px as usize);
    morphology::fill_small_holes(&mut bits, w, h, params.max_hole_px as usize);
    TissueMask { bits, ..mask.clone() }
}

/// Ingest an externally computed mask (pixels above 127 are tissue),
/// nearest-neighbour resized to `expected_dims` when they differ.
pub fn load_external_mask(path: &Path, expected_dims: (u32, u32), thumb_downsample: f64) -> Result<Detection> {
    let unreadable = |reason: String| Error::UnreadableMask { path: path.to_path_buf(), reason };
    let img = image::ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?
        .decode()
        .map_err(|e| unreadable(e.to_string()))?
        .into_luma8();
    let (sw, sh) = img.dimensions();
    let (w, h) = expected_dims;
    if (sw, sh) == (w, h) {
        let bits = img.as_raw().iter().map(|&v| u8::from(v > 127)).collect();
        return Ok(Detection { mask: TissueMask { width: w, height: h, bits, thumb_downsample }, warning: None });
    }
    let mask = TissueMask::from_fn(w, h, thumb_downsample, |x, y| {
        let sx = (u64::from(x) * u64::from(sw) / u64::from(w)) as u32;
        let sy = (u64::from(y) * u64::from(sh) / u64::from(h)) as u32;
        img.get_pixel(sx, sy)[0] > 127
    });
    Ok(Detection::warn(
        mask,
        format!("{}: mask is {sw}x{sh}, resized to {w}x{h}", path.display()),
    ))
}
