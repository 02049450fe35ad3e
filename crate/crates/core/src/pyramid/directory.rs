//! Synthetic pyramid directory: `meta.json` plus one `level_{i}.png` per level.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::PyramidMeta;
use crate::error::{Error, Result};

pub const DIR_META_FILE: &str = "meta.json";

#[derive(Debug, Serialize, Deserialize)]
struct DirMeta {
    slide_id: String,
    level_dims: Vec<[u32; 2]>,
    level_downsamples: Vec<f64>,
    objective_power: f64,
    #[serde(default)]
    mpp: Option<f64>,
}

fn level_path(dir: &Path, level: usize) -> PathBuf {
    dir.join(format!("level_{level}.png"))
}

pub(super) fn read_meta(dir: &Path) -> Result<PyramidMeta> {
    let meta_path = dir.join(DIR_META_FILE);
    if !meta_path.is_file() {
        return Err(Error::UnsupportedFormat(format!("{} has no {DIR_META_FILE}", dir.display())));
    }
    let raw: DirMeta = serde_json::from_slice(&fs::read(&meta_path)?)
        .map_err(|e| Error::CorruptPyramid(format!("{}: {e}", meta_path.display())))?;
    Ok(PyramidMeta {
        slide_id: raw.slide_id,
        level_dims: raw.level_dims.iter().map(|d| (d[0], d[1])).collect(),
        level_downsamples: raw.level_downsamples,
        objective_power: raw.objective_power,
        mpp: raw.mpp,
    })
}

/// Read and validate metadata; checks every level image header without
/// decoding pixels.
pub(super) fn open(dir: &Path) -> Result<(PyramidMeta, usize)> {
    let meta = read_meta(dir)?;
    meta.validate()?;
    for (i, &(w, h)) in meta.level_dims.iter().enumerate() {
        let p = level_path(dir, i);
        if !p.is_file() {
            return Err(Error::CorruptPyramid(format!(
                "metadata declares {} levels but {} is missing",
                meta.level_count(),
                p.display()
            )));
        }
        let dims = image::ImageReader::open(&p)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| Error::CorruptPyramid(format!("{}: {e}", p.display())))?
            .into_dimensions()
            .map_err(|e| Error::CorruptPyramid(format!("{}: {e}", p.display())))?;
        if dims != (w, h) {
            return Err(Error::CorruptPyramid(format!(
                "{} is {}x{}, metadata says {w}x{h}",
                p.display(),
                dims.0,
                dims.1
            )));
        }
    }
    let n = meta.level_count();
    Ok((meta, n))
}

pub(super) fn decode_level(dir: &Path, level: usize) -> Result<RgbImage> {
    let p = level_path(dir, level);
    let img = image::open(&p).map_err(|e| Error::ReadFailure(format!("{}: {e}", p.display())))?;
    Ok(img.into_rgb8())
}

/// Write `levels` (finest first) as a pyramid directory.
pub fn write_pyramid_dir(
    dir: &Path,
    slide_id: &str,
    levels: &[RgbImage],
    objective_power: f64,
    mpp: Option<f64>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (w0, h0) = levels
        .first()
        .map(|l| l.dimensions())
        .ok_or_else(|| Error::InvalidParam("pyramid needs at least one level".into()))?;
    let meta = DirMeta {
        slide_id: slide_id.to_owned(),
        level_dims: levels.iter().map(|l| [l.width(), l.height()]).collect(),
        level_downsamples: levels
            .iter()
            .map(|l| 0.5 * (f64::from(w0) / f64::from(l.width()) + f64::from(h0) / f64::from(l.height())))
            .collect(),
        objective_power,
        mpp,
    };
    for (i, level) in levels.iter().enumerate() {
        crate::io::write_png_rgb(&level_path(dir, i), level)?;
    }
    fs::write(dir.join(DIR_META_FILE), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}
