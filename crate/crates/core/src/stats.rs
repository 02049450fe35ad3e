//! Slide-level descriptors computed from a thumbnail and its tissue mask.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{morphological_cleanup, DetectorParams};
use crate::error::{Error, Result};
use crate::mask::TissueMask;
use crate::morphology::{self, Connectivity};
use crate::pyramid::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsParams {
    /// Half-width of the square band used for boundary contrast.
    pub band_px: u32,
    pub hue_bins: u32,
    pub lab_rate: f64,
    pub seed: u64,
}

impl Default for StatsParams {
    fn default() -> Self {
        Self { band_px: 3, hue_bins: 36, lab_rate: 0.01, seed: 0 }
    }
}

/// Tissue-pixel statistics are `None` when the slide has no tissue or the
/// value is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideStatistics {
    pub slide_id: String,
    pub tissue_coverage: f64,
    pub object_count: usize,
    pub edge_definition: Option<f64>,
    pub mean_brightness: Option<f64>,
    pub hue_entropy_bits: Option<f64>,
    pub colorfulness: Option<f64>,
}

/// ITU-R BT.601 luma.
#[inline]
pub fn gray(p: [u8; 3]) -> f64 {
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

fn check_dims(thumb: &RgbImage, mask: &TissueMask) -> Result<()> {
    if thumb.dimensions() != mask.dims() {
        return Err(Error::DimMismatch(format!(
            "thumbnail {:?} vs mask {:?}",
            thumb.dimensions(),
            mask.dims()
        )));
    }
    Ok(())
}

fn tissue_pixels<'a>(thumb: &'a RgbImage, mask: &'a TissueMask) -> Result<impl Iterator<Item = [u8; 3]> + 'a> {
    check_dims(thumb, mask)?;
    if mask.is_empty() {
        return Err(Error::NoTissue);
    }
    Ok(thumb.pixels().zip(&mask.bits).filter(|(_, &b)| b != 0).map(|(p, _)| p.0))
}

pub fn tissue_coverage(mask: &TissueMask) -> f64 {
    if mask.bits.is_empty() {
        return 0.0;
    }
    mask.count_ones() as f64 / mask.bits.len() as f64
}

pub fn object_count(mask: &TissueMask, params: &DetectorParams) -> usize {
    let cleaned = morphological_cleanup(mask, params);
    morphology::label(&cleaned.bits, mask.width as usize, mask.height as usize, 1, Connectivity::Eight).count()
}

/// Signed Michelson contrast between the mean gray level of the band just
/// inside the tissue boundary and the band just outside it.
pub fn edge_definition(thumb: &RgbImage, mask: &TissueMask, band_px: u32) -> Result<f64> {
    check_dims(thumb, mask)?;
    let (w, h) = (mask.width as usize, mask.height as usize);
    let r = band_px as usize;
    let eroded = morphology::erode_radius(&mask.bits, w, h, r);
    let dilated = morphology::dilate_radius(&mask.bits, w, h, r);
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for (i, p) in thumb.pixels().enumerate() {
        let m = mask.bits[i] != 0;
        if m && eroded[i] == 0 {
            sin += gray(p.0);
            nin += 1;
        } else if !m && dilated[i] != 0 {
            sout += gray(p.0);
            nout += 1;
        }
    }
    if nin == 0 {
        return Err(Error::UndefinedContrast("inside band is empty"));
    }
    if nout == 0 {
        return Err(Error::UndefinedContrast("outside band is empty"));
    }
    let (mi, mo) = (sin / nin as f64, sout / nout as f64);
    if mi + mo == 0.0 {
        return Err(Error::UndefinedContrast("both bands are black"));
    }
    Ok((mi - mo) / (mi + mo))
}

pub fn mean_brightness(thumb: &RgbImage, mask: &TissueMask) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in tissue_pixels(thumb, mask)? {
        sum += gray(p);
        n += 1;
    }
    Ok(sum / n as f64 / 255.0)
}

/// HSV hue in degrees, `[0, 360)`. Achromatic pixels get hue 0.
pub fn hue_degrees(p: [u8; 3]) -> f64 {
    let [r, g, b] = p.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        60.0 * ((g - b) / d)
    } else if max == g {
        60.0 * ((b - r) / d) + 120.0
    } else {
        60.0 * ((r - g) / d) + 240.0
    };
    let h = h.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

pub fn hue_bin(p: [u8; 3], bins: u32) -> usize {
    ((hue_degrees(p) / 360.0 * f64::from(bins)) as usize).min(bins as usize - 1)
}

/// Shannon entropy (bits) of the tissue hue histogram.
pub fn hue_entropy(thumb: &RgbImage, mask: &TissueMask, bins: u32) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidParam("hue bins must be positive".into()));
    }
    let mut hist = vec![0u64; bins as usize];
    for p in tissue_pixels(thumb, mask)? {
        hist[hue_bin(p, bins)] += 1;
    }
    let n: u64 = hist.iter().sum();
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n as f64;
            -q * q.log2()
        })
        .sum())
}

/// Opponent-colour colorfulness over tissue pixels.
pub fn colorfulness(thumb: &RgbImage, mask: &TissueMask) -> Result<f64> {
    let (mut n, mut s_rg, mut s_yb, mut q_rg, mut q_yb) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for [r, g, b] in tissue_pixels(thumb, mask)?.map(|p| p.map(f64::from)) {
        let rg = r - g;
        let yb = 0.5 * (r + g) - b;
        n += 1.0;
        s_rg += rg;
        s_yb += yb;
        q_rg += rg * rg;
        q_yb += yb * yb;
    }
    let (m_rg, m_yb) = (s_rg / n, s_yb / n);
    let var_rg = (q_rg / n - m_rg * m_rg).max(0.0);
    let var_yb = (q_yb / n - m_yb * m_yb).max(0.0);
    Ok((var_rg + var_yb).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt())
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB to CIE L*a*b* under D65.
pub fn srgb_to_lab(p: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = p.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    let f = |t: f64| if t > EPS { t.cbrt() } else { (KAPPA * t + 16.0) / 116.0 };
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Lab values of `round(rate * n)` distinct tissue pixels drawn with a
/// seeded generator, in raster order.
pub fn sample_lab_chroma(thumb: &RgbImage, mask: &TissueMask, rate: f64, seed: u64) -> Result<Vec<[f64; 3]>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidParam(format!("sampling rate {rate} outside [0, 1]")));
    }
    let pixels: Vec<[u8; 3]> = tissue_pixels(thumb, mask)?.collect();
    let k = ((rate * pixels.len() as f64).round() as usize).min(pixels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, pixels.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| srgb_to_lab(pixels[i])).collect())
}

pub fn write_lab_csv(path: &Path, samples: &[[f64; 3]]) -> Result<()> {
    let mut buf = Vec::with_capacity(24 * samples.len() + 8);
    writeln!(buf, "L,a,b")?;
    for [l, a, b] in samples {
        writeln!(buf, "{l},{a},{b}")?;
    }
    crate::io::atomic_write_bytes(path, &buf)
}

pub fn compute_slide_stats(
    slide_id: &str,
    thumb: &RgbImage,
    mask: &TissueMask,
    detector: &DetectorParams,
    params: &StatsParams,
) -> Result<SlideStatistics> {
    check_dims(thumb, mask)?;
    let object_count = object_count(mask, detector);
    let mut stats = SlideStatistics {
        slide_id: slide_id.to_owned(),
        tissue_coverage: tissue_coverage(mask),
        object_count,
        edge_definition: None,
        mean_brightness: None,
        hue_entropy_bits: None,
        colorfulness: None,
    };
    if object_count == 0 {
        return Ok(stats);
    }
    stats.edge_definition = match edge_definition(thumb, mask, params.band_px) {
        Ok(v) => Some(v),
        Err(Error::UndefinedContrast(_)) => None,
        Err(e) => return Err(e),
    };
    stats.mean_brightness = Some(mean_brightness(thumb, mask)?);
    stats.hue_entropy_bits = Some(hue_entropy(thumb, mask, params.hue_bins)?);
    stats.colorfulness = Some(colorfulness(thumb, mask)?);
    Ok(stats)
}
