//! Tiled pyramidal TIFF: baseline 8-bit RGB, one tiled IFD per level, finest first.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::RgbImage;
use tiff::decoder::{ChunkType, Decoder, DecodingResult, Limits};
use tiff::encoder::TiffEncoder;
use tiff::tags::Tag;
use tiff::ColorType;

use super::PyramidMeta;
use crate::error::{Error, Result};

pub(super) struct TiffSource {
    path: PathBuf,
    /// IFD index per pyramid level.
    ifds: Vec<usize>,
}

fn decoder(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let f = File::open(path)?;
    Decoder::new(BufReader::new(f))
        .map(|d| d.with_limits(Limits::unlimited()))
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))
}

fn description_value(desc: &str, key: &str) -> Option<f64> {
    desc.split(['|', '\n', ';'])
        .filter_map(|part| part.split_once('='))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
        .and_then(|(_, v)| v.trim().parse().ok())
}

fn resolution_mpp(dec: &mut Decoder<BufReader<File>>) -> Option<f64> {
    let xres = dec.find_tag(Tag::XResolution).ok()??.into_f64().ok()?;
    let unit = dec.find_tag_unsigned::<u16>(Tag::ResolutionUnit).ok()?.unwrap_or(2);
    if !(xres > 0.0) {
        return None;
    }
    match unit {
        3 => Some(1e4 / xres),
        2 => Some(25_400.0 / xres),
        _ => None,
    }
}

/// Objective power when the file does not declare one.
pub(crate) fn fallback_objective(mpp: Option<f64>) -> f64 {
    match mpp {
        Some(m) if m <= 0.3 => 40.0,
        _ => 20.0,
    }
}

pub(super) fn open(path: &Path) -> Result<(PyramidMeta, TiffSource)> {
    let mut dec = decoder(path)?;
    let desc = dec.get_tag_ascii_string(Tag::ImageDescription).ok();
    let mut mpp = desc.as_deref().and_then(|d| description_value(d, "MPP"));
    if mpp.is_none() {
        mpp = resolution_mpp(&mut dec);
    }
    let objective = match desc.as_deref().and_then(|d| description_value(d, "AppMag")) {
        Some(p) if p > 0.0 => p,
        _ => {
            let p = fallback_objective(mpp);
            log::warn!("{}: no objective power in metadata, assuming {p}x", path.display());
            p
        }
    };

    let mut dims = Vec::new();
    let mut ifds = Vec::new();
    let mut index = 0usize;
    loop {
        let ct = dec.colortype().map_err(|e| Error::CorruptPyramid(e.to_string()))?;
        let d = dec.dimensions().map_err(|e| Error::CorruptPyramid(e.to_string()))?;
        let tiled = dec.get_chunk_type() == ChunkType::Tile;
        let usable = ct == ColorType::RGB(8) && (tiled || index == 0);
        if index == 0 && ct != ColorType::RGB(8) {
            return Err(Error::UnsupportedFormat(format!("{}: colour type {ct:?}, need 8-bit RGB", path.display())));
        }
        // Associated images (label, macro) follow the pyramid; stop at the
        // first IFD that is not a smaller tiled RGB level.
        if usable && dims.last().map_or(true, |&(w, h): &(u32, u32)| d.0 < w && d.1 < h) {
            dims.push(d);
            ifds.push(index);
        } else if index > 0 {
            break;
        }
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| Error::CorruptPyramid(e.to_string()))?;
        index += 1;
    }

    let (w0, h0) = dims[0];
    let level_downsamples = dims
        .iter()
        .map(|&(w, h)| 0.5 * (f64::from(w0) / f64::from(w) + f64::from(h0) / f64::from(h)))
        .collect();
    let slide_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("slide")
        .to_owned();
    let meta = PyramidMeta {
        slide_id,
        level_dims: dims,
        level_downsamples,
        objective_power: objective,
        mpp,
    };
    Ok((meta, TiffSource { path: path.to_path_buf(), ifds }))
}

fn bytes(r: DecodingResult) -> Result<Vec<u8>> {
    match r {
        DecodingResult::U8(v) => Ok(v),
        _ => Err(Error::ReadFailure("expected 8-bit samples".into())),
    }
}

impl TiffSource {
    pub(super) fn read(&self, level: usize, x: u32, y: u32, w: u32, h: u32) -> Result<RgbImage> {
        let read_err = |e: tiff::TiffError| Error::ReadFailure(format!("{}: {e}", self.path.display()));
        let mut dec = decoder(&self.path)?;
        dec.seek_to_image(self.ifds[level]).map_err(read_err)?;
        let (iw, _) = dec.dimensions().map_err(read_err)?;

        if dec.get_chunk_type() != ChunkType::Tile {
            let full = bytes(dec.read_image().map_err(read_err)?)?;
            let (iw, ih) = dec.dimensions().map_err(read_err)?;
            let img = RgbImage::from_raw(iw, ih, full)
                .ok_or_else(|| Error::ReadFailure("short strip image".into()))?;
            return Ok(super::crop(&img, x, y, w, h));
        }

        let (tw, th) = dec.chunk_dimensions();
        let tiles_across = iw.div_ceil(tw);
        let mut out = vec![0u8; w as usize * h as usize * 3];
        let out_stride = w as usize * 3;
        for ty in y / th..=(y + h - 1) / th {
            for tx in x / tw..=(x + w - 1) / tw {
                let index = ty * tiles_across + tx;
                let (cw, ch) = dec.chunk_data_dimensions(index);
                let data = bytes(dec.read_chunk(index).map_err(read_err)?)?;
                let stride = if data.len() >= (tw * th * 3) as usize { tw } else { cw } as usize * 3;
                let (ox, oy) = (tx * tw, ty * th);
                let x0 = x.max(ox);
                let x1 = (x + w).min(ox + cw);
                let y0 = y.max(oy);
                let y1 = (y + h).min(oy + ch);
                if x0 >= x1 || y0 >= y1 {
                    continue;
                }
                let n = (x1 - x0) as usize * 3;
                for row in y0..y1 {
                    let src = (row - oy) as usize * stride + (x0 - ox) as usize * 3;
                    let dst = (row - y) as usize * out_stride + (x0 - x) as usize * 3;
                    out[dst..dst + n].copy_from_slice(&data[src..src + n]);
                }
            }
        }
        Ok(RgbImage::from_raw(w, h, out).expect("region buffer size"))
    }
}

/// Write `levels` (finest first) as an uncompressed tiled pyramidal TIFF.
///
/// Objective power and mpp go into an Aperio-style `ImageDescription`
/// (`AppMag = 40|MPP = 0.25`); pass `None` to omit them.
pub fn write_tiled_tiff(
    path: &Path,
    levels: &[RgbImage],
    tile: u32,
    objective_power: Option<f64>,
    mpp: Option<f64>,
) -> Result<()> {
    let enc_err = |e: tiff::TiffError| Error::Io(std::io::Error::other(e.to_string()));
    if levels.is_empty() || tile == 0 || tile % 16 != 0 {
        return Err(Error::InvalidParam("need >= 1 level and a tile size that is a multiple of 16".into()));
    }
    let mut enc = TiffEncoder::new(BufWriter::new(File::create(path)?)).map_err(enc_err)?;
    for (i, level) in levels.iter().enumerate() {
        let (w, h) = level.dimensions();
        let mut dir = enc.image_directory().map_err(enc_err)?;
        let mut offsets = Vec::new();
        let mut counts = Vec::new();
        let stride = w as usize * 3;
        let mut buf = vec![0u8; (tile * tile * 3) as usize];
        for ty in 0..h.div_ceil(tile) {
            for tx in 0..w.div_ceil(tile) {
                buf.iter_mut().for_each(|b| *b = 0);
                let cw = tile.min(w - tx * tile) as usize;
                for r in 0..tile.min(h - ty * tile) as usize {
                    let src = (ty * tile) as usize * stride + r * stride + (tx * tile) as usize * 3;
                    let dst = r * tile as usize * 3;
                    buf[dst..dst + cw * 3].copy_from_slice(&level.as_raw()[src..src + cw * 3]);
                }
                offsets.push(u32::try_from(dir.write_data(buf.as_slice()).map_err(enc_err)?).map_err(|_| {
                    Error::InvalidParam("pyramid exceeds classic TIFF 4 GiB limit".into())
                })?);
                counts.push(buf.len() as u32);
            }
        }
        if i > 0 {
            dir.write_tag(Tag::NewSubfileType, 1u32).map_err(enc_err)?;
        }
        dir.write_tag(Tag::ImageWidth, w).map_err(enc_err)?;
        dir.write_tag(Tag::ImageLength, h).map_err(enc_err)?;
        dir.write_tag(Tag::BitsPerSample, &[8u16, 8, 8][..]).map_err(enc_err)?;
        dir.write_tag(Tag::Compression, 1u16).map_err(enc_err)?;
        dir.write_tag(Tag::PhotometricInterpretation, 2u16).map_err(enc_err)?;
        if i == 0 {
            let mut desc = String::from("wsiprep pyramid");
            if let Some(p) = objective_power {
                desc.push_str(&format!("|AppMag = {p}"));
            }
            if let Some(m) = mpp {
                desc.push_str(&format!("|MPP = {m}"));
            }
            dir.write_tag(Tag::ImageDescription, desc.as_str()).map_err(enc_err)?;
        }
        dir.write_tag(Tag::SamplesPerPixel, 3u16).map_err(enc_err)?;
        dir.write_tag(Tag::PlanarConfiguration, 1u16).map_err(enc_err)?;
        dir.write_tag(Tag::TileWidth, tile).map_err(enc_err)?;
        dir.write_tag(Tag::TileLength, tile).map_err(enc_err)?;
        dir.write_tag(Tag::TileOffsets, offsets.as_slice()).map_err(enc_err)?;
        dir.write_tag(Tag::TileByteCounts, counts.as_slice()).map_err(enc_err)?;
        dir.finish().map_err(enc_err)?;
    }
    Ok(())
}
