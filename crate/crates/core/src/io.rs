//! PNG encoding and atomic file replacement.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, RgbImage};

use crate::error::{Error, Result};

/// Suffix of in-flight files; a final name only ever appears via rename.
pub const PARTIAL_SUFFIX: &str = ".partial";

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(PARTIAL_SUFFIX);
    PathBuf::from(s)
}

/// Run `write` against a temporary sibling of `path`, then rename it into place.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = partial_path(path);
    match write(&tmp) {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, |tmp| {
        let mut f = File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(())
    })
}

fn encode_png(path: &Path, data: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    PngEncoder::new_with_quality(f, CompressionType::Fast, FilterType::Adaptive)
        .write_image(data, w, h, color)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    encode_png(path, img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

pub fn write_png_gray(path: &Path, data: &[u8], w: u32, h: u32) -> Result<()> {
    encode_png(path, data, w, h, ExtendedColorType::L8)
}

pub fn atomic_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    atomic_write(path, |tmp| write_png_rgb(tmp, img))
}

pub fn atomic_png_gray(path: &Path, data: &[u8], w: u32, h: u32) -> Result<()> {
    atomic_write(path, |tmp| write_png_gray(tmp, data, w, h))
}
