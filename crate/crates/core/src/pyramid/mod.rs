//! Multi-resolution slide access.
//!
//! A [`SlidePyramid`] holds level metadata and a backing source. Region
//! coordinates are always given in level-0 pixels and converted to the
//! requested level by floor division with that level's downsample.

mod directory;
pub mod resample;
pub mod tiff;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

pub use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use directory::{write_pyramid_dir, DIR_META_FILE};

/// Level geometry and optical metadata of a slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidMeta {
    pub slide_id: String,
    /// `(width, height)` per level, finest first.
    pub level_dims: Vec<(u32, u32)>,
    pub level_downsamples: Vec<f64>,
    pub objective_power: f64,
    pub mpp: Option<f64>,
}

impl PyramidMeta {
    pub fn validate(&self) -> Result<()> {
        let n = self.level_dims.len();
        if n == 0 {
            return Err(Error::CorruptPyramid("pyramid has no levels".into()));
        }
        if self.level_downsamples.len() != n {
            return Err(Error::CorruptPyramid(format!(
                "{} level dims but {} downsamples",
                n,
                self.level_downsamples.len()
            )));
        }
        if (self.level_downsamples[0] - 1.0).abs() > 1e-9 {
            return Err(Error::CorruptPyramid(format!(
                "level 0 downsample is {}, expected 1",
                self.level_downsamples[0]
            )));
        }
        for w in self.level_downsamples.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::CorruptPyramid(format!(
                    "downsamples not strictly increasing: {:?}",
                    self.level_downsamples
                )));
            }
        }
        let (w0, h0) = self.level_dims[0];
        if w0 == 0 || h0 == 0 {
            return Err(Error::CorruptPyramid("empty level 0".into()));
        }
        for (i, (&(w, h), &ds)) in self.level_dims.iter().zip(&self.level_downsamples).enumerate() {
            let ew = f64::from(w0) / ds;
            let eh = f64::from(h0) / ds;
            if w == 0 || h == 0 || (f64::from(w) - ew).abs() > 1.0 || (f64::from(h) - eh).abs() > 1.0 {
                return Err(Error::CorruptPyramid(format!(
                    "level {i} is {w}x{h} but downsample {ds} implies {ew:.1}x{eh:.1}"
                )));
            }
        }
        if !(self.objective_power > 0.0) {
            return Err(Error::CorruptPyramid(format!(
                "objective power {} must be positive",
                self.objective_power
            )));
        }
        if let Some(mpp) = self.mpp {
            if !(mpp > 0.0) {
                return Err(Error::CorruptPyramid(format!("mpp {mpp} must be positive")));
            }
        }
        Ok(())
    }

    pub fn level_count(&self) -> usize {
        self.level_dims.len()
    }

    pub fn level0_dims(&self) -> (u32, u32) {
        self.level_dims[0]
    }

    /// Thumbnail size and downsample at `target_power`, from metadata only.
    pub fn thumbnail_dims(&self, target_power: f64) -> Result<((u32, u32), f64)> {
        if !(target_power > 0.0) || target_power > self.objective_power + 1e-9 {
            return Err(Error::MagnificationUnavailable { target: target_power, objective: self.objective_power });
        }
        let ds = self.objective_power / target_power;
        let (w0, h0) = self.level0_dims();
        let tw = ((f64::from(w0) / ds).floor() as u32).max(1);
        let th = ((f64::from(h0) / ds).floor() as u32).max(1);
        Ok(((tw, th), ds))
    }

    /// Largest level whose downsample does not exceed `desired`, so stored
    /// data is never upsampled.
    pub fn best_level_for_downsample(&self, desired: f64) -> usize {
        self.level_downsamples
            .iter()
            .rposition(|&ds| ds <= desired + 1e-9)
            .unwrap_or(0)
    }
}

enum Source {
    Directory {
        dir: PathBuf,
        levels: Vec<OnceLock<Arc<RgbImage>>>,
    },
    Tiff(tiff::TiffSource),
    Memory(Vec<RgbImage>),
}

/// Handle to an open multi-resolution slide.
///
/// Safe to share across threads; `read_region` takes `&self`.
pub struct SlidePyramid {
    meta: PyramidMeta,
    source: Source,
    reads: AtomicU64,
}

impl std::fmt::Debug for SlidePyramid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlidePyramid").field("meta", &self.meta).finish_non_exhaustive()
    }
}

/// Open a tiled pyramidal TIFF or a synthetic pyramid directory.
///
/// Only headers are read; pixel data is decoded on first access.
pub fn open_slide(path: impl AsRef<Path>) -> Result<SlidePyramid> {
    let path = path.as_ref();
    if path.is_dir() {
        let (meta, levels) = directory::open(path)?;
        return SlidePyramid::with_source(
            meta,
            Source::Directory {
                dir: path.to_path_buf(),
                levels: (0..levels).map(|_| OnceLock::new()).collect(),
            },
        );
    }
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )));
    }
    if is_tiff_path(path) {
        let (meta, src) = tiff::open(path)?;
        return SlidePyramid::with_source(meta, Source::Tiff(src));
    }
    Err(Error::UnsupportedFormat(path.display().to_string()))
}

pub(crate) fn is_tiff_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("tif" | "tiff")
    )
}

/// Slide identifier derivable without opening the slide: the `slide_id` from
/// a pyramid directory's metadata, or a TIFF's file stem.
pub fn probe_slide_id(path: &Path) -> Result<String> {
    if path.is_dir() {
        return Ok(directory::read_meta(path)?.slide_id);
    }
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::UnsupportedFormat(path.display().to_string()))
}

impl SlidePyramid {
    fn with_source(meta: PyramidMeta, source: Source) -> Result<Self> {
        meta.validate()?;
        Ok(Self { meta, source, reads: AtomicU64::new(0) })
    }

    /// In-memory pyramid with explicit metadata; image sizes must match it.
    pub fn from_parts(meta: PyramidMeta, levels: Vec<RgbImage>) -> Result<Self> {
        if levels.len() != meta.level_dims.len()
            || levels.iter().zip(&meta.level_dims).any(|(l, &d)| l.dimensions() != d)
        {
            return Err(Error::CorruptPyramid("level images do not match the metadata".into()));
        }
        Self::with_source(meta, Source::Memory(levels))
    }

    /// In-memory pyramid; level downsamples are derived from the level widths.
    pub fn from_levels(
        slide_id: impl Into<String>,
        levels: Vec<RgbImage>,
        objective_power: f64,
        mpp: Option<f64>,
    ) -> Result<Self> {
        let w0 = levels.first().map(|l| f64::from(l.width())).unwrap_or(0.0);
        let h0 = levels.first().map(|l| f64::from(l.height())).unwrap_or(0.0);
        let meta = PyramidMeta {
            slide_id: slide_id.into(),
            level_dims: levels.iter().map(|l| l.dimensions()).collect(),
            level_downsamples: levels
                .iter()
                .map(|l| 0.5 * (w0 / f64::from(l.width()) + h0 / f64::from(l.height())))
                .collect(),
            objective_power,
            mpp,
        };
        Self::with_source(meta, Source::Memory(levels))
    }

    pub fn meta(&self) -> &PyramidMeta {
        &self.meta
    }

    pub fn slide_id(&self) -> &str {
        &self.meta.slide_id
    }

    pub fn level_count(&self) -> usize {
        self.meta.level_count()
    }

    pub fn level_dims(&self) -> &[(u32, u32)] {
        &self.meta.level_dims
    }

    pub fn level_downsamples(&self) -> &[f64] {
        &self.meta.level_downsamples
    }

    pub fn objective_power(&self) -> f64 {
        self.meta.objective_power
    }

    pub fn mpp(&self) -> Option<f64> {
        self.meta.mpp
    }

    /// Number of `read_region` calls served by this handle.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn best_level_for_downsample(&self, desired: f64) -> usize {
        self.meta.best_level_for_downsample(desired)
    }

    /// Read a `w`x`h` region from `level`, anchored at level-0 coordinates `(x, y)`.
    pub fn read_region(&self, level: usize, x: i64, y: i64, w: u32, h: u32) -> Result<RgbImage> {
        let (lx, ly) = self.level_origin(level, x, y, w, h)?;
        self.reads.fetch_add(1, Ordering::Relaxed);
        match &self.source {
            Source::Memory(levels) => Ok(crop(&levels[level], lx, ly, w, h)),
            Source::Directory { dir, levels } => {
                let img = match levels[level].get() {
                    Some(img) => img.clone(),
                    None => {
                        let decoded = Arc::new(directory::decode_level(dir, level)?);
                        let _ = levels[level].set(decoded.clone());
                        decoded
                    }
                };
                let (iw, ih) = img.dimensions();
                if lx + w > iw || ly + h > ih {
                    return Err(Error::ReadFailure(format!(
                        "level {level} image is {iw}x{ih}, smaller than its metadata"
                    )));
                }
                Ok(crop(&img, lx, ly, w, h))
            }
            Source::Tiff(src) => src.read(level, lx, ly, w, h),
        }
    }

    fn level_origin(&self, level: usize, x: i64, y: i64, w: u32, h: u32) -> Result<(u32, u32)> {
        if level >= self.level_count() {
            return Err(Error::OutOfBounds(format!(
                "level {level} requested, slide has {}",
                self.level_count()
            )));
        }
        if x < 0 || y < 0 || w == 0 || h == 0 {
            return Err(Error::OutOfBounds(format!("region ({x}, {y}, {w}, {h}) is empty or negative")));
        }
        let ds = self.meta.level_downsamples[level];
        let lx = (x as f64 / ds).floor() as u64;
        let ly = (y as f64 / ds).floor() as u64;
        let (lw, lh) = self.meta.level_dims[level];
        if lx + u64::from(w) > u64::from(lw) || ly + u64::from(h) > u64::from(lh) {
            return Err(Error::OutOfBounds(format!(
                "region at level {level} ({lx}, {ly}) + {w}x{h} exceeds {lw}x{lh}"
            )));
        }
        Ok((lx as u32, ly as u32))
    }

    /// Read a whole level.
    pub fn read_level(&self, level: usize) -> Result<RgbImage> {
        let (w, h) = *self
            .meta
            .level_dims
            .get(level)
            .ok_or_else(|| Error::OutOfBounds(format!("level {level}")))?;
        self.read_region(level, 0, 0, w, h)
    }

    /// Render the slide at `target_power`, returning the image and its
    /// downsample relative to level 0.
    pub fn get_thumbnail(&self, target_power: f64) -> Result<(RgbImage, f64)> {
        if !(target_power > 0.0) || target_power > self.objective_power() + 1e-9 {
            return Err(Error::MagnificationUnavailable {
                target: target_power,
                objective: self.objective_power(),
            });
        }
        let ((tw, th), ds) = self.meta.thumbnail_dims(target_power)?;
        let level = self.best_level_for_downsample(ds);
        let src = self.read_level(level)?;
        Ok((resample::area_resize(&src, tw, th), ds))
    }
}

pub(crate) fn crop(img: &RgbImage, x: u32, y: u32, w: u32, h: u32) -> RgbImage {
    if x == 0 && y == 0 && img.dimensions() == (w, h) {
        return img.clone();
    }
    let stride = img.width() as usize * 3;
    let src = img.as_raw();
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for row in y as usize..(y + h) as usize {
        let start = row * stride + x as usize * 3;
        out.extend_from_slice(&src[start..start + w as usize * 3]);
    }
    RgbImage::from_raw(w, h, out).expect("crop buffer size")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb(rgb))
    }

    fn meta(dims: &[(u32, u32)], ds: &[f64], objective: f64) -> PyramidMeta {
        PyramidMeta {
            slide_id: "s".into(),
            level_dims: dims.to_vec(),
            level_downsamples: ds.to_vec(),
            objective_power: objective,
            mpp: None,
        }
    }

    #[test]
    fn downsamples_follow_dimension_ratios() {
        let pyr = SlidePyramid::from_levels(
            "s",
            vec![constant(4096, 4096, [1, 2, 3]), constant(1024, 1024, [1, 2, 3]), constant(256, 256, [1, 2, 3])],
            40.0,
            None,
        )
        .unwrap();
        assert_eq!(pyr.level_downsamples(), &[1.0, 4.0, 16.0]);
        let single = SlidePyramid::from_levels("s", vec![constant(512, 512, [0; 3])], 20.0, None).unwrap();
        assert_eq!(single.level_count(), 1);
        assert_eq!(single.level_downsamples(), &[1.0]);
    }

    #[test]
    fn non_increasing_downsamples_are_corrupt() {
        let m = meta(&[(100, 100), (50, 50), (50, 50)], &[1.0, 2.0, 2.0], 20.0);
        assert!(matches!(m.validate(), Err(Error::CorruptPyramid(_))));
        let m = meta(&[(100, 100), (10, 10)], &[1.0, 2.0], 20.0);
        assert!(matches!(m.validate(), Err(Error::CorruptPyramid(_))));
    }

    #[test]
    fn best_level_rule() {
        let m = meta(&[(4096, 4096), (1024, 1024), (256, 256)], &[1.0, 4.0, 16.0], 40.0);
        assert_eq!(m.best_level_for_downsample(2.0), 0);
        assert_eq!(m.best_level_for_downsample(16.0), 2);
        assert_eq!(m.best_level_for_downsample(1.0), 0);
        assert_eq!(m.best_level_for_downsample(4.0), 1);
        assert_eq!(m.best_level_for_downsample(1000.0), 2);
        let mut prev = 0;
        for i in 0..400 {
            let l = m.best_level_for_downsample(1.0 + i as f64 * 0.1);
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn constant_reads_at_every_level() {
        let c = [10, 20, 30];
        let pyr = SlidePyramid::from_levels(
            "s",
            vec![constant(64, 64, c), constant(16, 16, c)],
            40.0,
            None,
        )
        .unwrap();
        let r = pyr.read_region(0, 0, 0, 16, 16).unwrap();
        assert!(r.pixels().all(|p| p.0 == c));
        let r = pyr.read_region(1, 0, 0, 8, 8).unwrap();
        assert_eq!(r.dimensions(), (8, 8));
        assert!(r.pixels().all(|p| p.0 == c));
        assert_eq!(pyr.read_count(), 2);
    }

    #[test]
    fn out_of_bounds_reads() {
        let pyr = SlidePyramid::from_levels("s", vec![constant(64, 64, [0; 3])], 40.0, None).unwrap();
        assert!(matches!(pyr.read_region(0, 64, 0, 1, 1), Err(Error::OutOfBounds(_))));
        assert!(matches!(pyr.read_region(0, 60, 60, 8, 8), Err(Error::OutOfBounds(_))));
        assert!(matches!(pyr.read_region(1, 0, 0, 1, 1), Err(Error::OutOfBounds(_))));
        assert!(matches!(pyr.read_region(0, -1, 0, 1, 1), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn level_coordinates_floor_divide() {
        let mut l0 = RgbImage::new(64, 64);
        for (x, y, p) in l0.enumerate_pixels_mut() {
            *p = image::Rgb([x as u8, y as u8, 0]);
        }
        let l1 = resample::area_resize(&l0, 16, 16);
        let pyr = SlidePyramid::from_levels("s", vec![l0, l1.clone()], 40.0, None).unwrap();
        let r = pyr.read_region(1, 7, 9, 2, 2).unwrap();
        assert_eq!(r.get_pixel(0, 0), l1.get_pixel(1, 2));
    }

    #[test]
    fn thumbnail_identity_and_scaling() {
        let c = [200, 100, 50];
        let pyr = SlidePyramid::from_levels("s", vec![constant(96, 64, c), constant(24, 16, c)], 40.0, None).unwrap();
        let (t, ds) = pyr.get_thumbnail(40.0).unwrap();
        assert_eq!(ds, 1.0);
        assert_eq!(t.dimensions(), (96, 64));
        let (t, ds) = pyr.get_thumbnail(1.25).unwrap();
        assert_eq!(ds, 32.0);
        assert_eq!(t.dimensions(), (3, 2));
        assert!(t.pixels().all(|p| p.0 == c));
        let (t, ds) = pyr.get_thumbnail(3.0).unwrap();
        assert!((ds - 40.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.dimensions(), (7, 4));
        assert!(matches!(pyr.get_thumbnail(80.0), Err(Error::MagnificationUnavailable { .. })));
    }
}
