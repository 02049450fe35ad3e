//! Patch reads, PNG export and feature embedding.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crossbeam_channel::bounded;

use crate::error::{Error, Result};
use crate::grid::{PatchCoords, ReadPlan};
use crate::io::atomic_png_rgb;
use crate::pipeline::encoders::PatchEncoder;
use crate::pipeline::store::FeatureMatrix;
use crate::pyramid::{resample::area_resize, RgbImage, SlidePyramid};

/// Written into an image directory once every patch is on disk.
pub const COMPLETE_MARKER: &str = ".complete";

pub fn patch_file_name(slide_id: &str, (x, y): (i64, i64)) -> String {
    format!("{slide_id}_x{x}_y{y}.png")
}

/// Read the patch whose level-0 footprint starts at `top_left`, resized to
/// the output patch size when the plan needs it. A read window that
/// overshoots the level edge through rounding is shifted back inside.
pub fn read_patch(pyr: &SlidePyramid, plan: &ReadPlan, top_left: (i64, i64)) -> Result<RgbImage> {
    let r = plan.read_size_at_level_px;
    let ds = *pyr
        .level_downsamples()
        .get(plan.level)
        .ok_or_else(|| Error::OutOfBounds(format!("plan level {} not in slide", plan.level)))?;
    let (lw, lh) = pyr.level_dims()[plan.level];
    let fit = |v: i64, limit: u32| -> i64 {
        let lv = (v as f64 / ds).floor() as i64;
        let max = i64::from(limit) - i64::from(r);
        // rounding overshoots by at most one level pixel; anything more is a bad coordinate
        if lv == max + 1 && max >= 0 {
            (max as f64 * ds).ceil() as i64
        } else {
            v
        }
    };
    let img = pyr.read_region(plan.level, fit(top_left.0, lw), fit(top_left.1, lh), r, r)?;
    Ok(if plan.resize_needed { area_resize(&img, plan.patch_size_px, plan.patch_size_px) } else { img })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportReport {
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<((i64, i64), String)>,
}

#[derive(Debug, Clone, Copy)]
pub struct ExportOptions {
    pub writers: usize,
    /// Bounded queue between the reader and the writers.
    pub queue: usize,
    /// Keep patch files that already exist.
    pub skip_existing: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self { writers: 4, queue: 16, skip_existing: true }
    }
}

/// Write one PNG per coordinate into `out_dir`. Reading happens on the
/// calling thread while a bounded pool encodes and writes; per-patch
/// failures are collected rather than aborting the export.
pub fn export_patches(pyr: &SlidePyramid, pc: &PatchCoords, out_dir: &Path, opts: &ExportOptions) -> Result<ExportReport> {
    fs::create_dir_all(out_dir)?;
    let marker = out_dir.join(COMPLETE_MARKER);
    let _ = fs::remove_file(&marker);
    let failures = Mutex::new(Vec::new());
    let (tx, rx) = bounded::<((i64, i64), PathBuf, RgbImage)>(opts.queue.max(1));
    let mut report = ExportReport::default();

    let written = std::thread::scope(|s| {
        let handles: Vec<_> = (0..opts.writers.max(1))
            .map(|_| {
                let rx = rx.clone();
                let failures = &failures;
                s.spawn(move || {
                    let mut n = 0usize;
                    for (xy, path, img) in rx {
                        match atomic_png_rgb(&path, &img) {
                            Ok(()) => n += 1,
                            Err(e) => failures.lock().unwrap().push((xy, e.to_string())),
                        }
                    }
                    n
                })
            })
            .collect();
        drop(rx);
        for &xy in &pc.coords {
            let path = out_dir.join(patch_file_name(&pc.slide_id, xy));
            if opts.skip_existing && path.is_file() {
                report.skipped += 1;
                continue;
            }
            match read_patch(pyr, &pc.plan, xy) {
                Ok(img) => {
                    if tx.send((xy, path, img)).is_err() {
                        break;
                    }
                }
                Err(e) => failures.lock().unwrap().push((xy, e.to_string())),
            }
        }
        drop(tx);
        handles.into_iter().map(|h| h.join().expect("patch writer panicked")).sum::<usize>()
    });

    report.written = written;
    report.failures = failures.into_inner().unwrap();
    report.failures.sort();
    if report.failures.is_empty() {
        crate::io::atomic_write_bytes(&marker, format!("{}\n", pc.len()).as_bytes())?;
    } else {
        log::warn!("{}: {} patch exports failed", pc.slide_id, report.failures.len());
    }
    Ok(report)
}

/// Whether `out_dir` holds a finished export of `pc`.
pub fn export_complete(pc: &PatchCoords, out_dir: &Path) -> bool {
    out_dir.join(COMPLETE_MARKER).is_file()
        && pc.coords.iter().all(|&xy| out_dir.join(patch_file_name(&pc.slide_id, xy)).is_file())
}

/// Encode every patch; row `i` belongs to `pc.coords[i]`.
pub fn embed_patches(pyr: &SlidePyramid, pc: &PatchCoords, encoder: &dyn PatchEncoder) -> Result<FeatureMatrix> {
    let dim = encoder.spec().output_dim;
    let mut data = Vec::with_capacity(dim * pc.len());
    for &xy in &pc.coords {
        let f = encoder.encode(&read_patch(pyr, &pc.plan, xy)?);
        if f.len() != dim {
            return Err(Error::InvalidParam(format!(
                "encoder {} returned {} values, expected {dim}",
                encoder.spec().name,
                f.len()
            )));
        }
        data.extend(f);
    }
    Ok(FeatureMatrix { dim, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{plan_read, AcceptMode};
    use crate::pipeline::encoders::MeanRgb;
    use image::Rgb;

    fn checker(n: u32) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| if (x / 3 + y / 5) % 2 == 0 { Rgb([250, 10, 90]) } else { Rgb([5, 200, 40]) })
    }

    fn coords(pyr: &SlidePyramid, mag: f64, patch: u32, xy: Vec<(i64, i64)>) -> PatchCoords {
        PatchCoords {
            slide_id: "s".into(),
            coords: xy,
            plan: plan_read(pyr.meta(), mag, patch, 0).unwrap(),
            accept_mode: AcceptMode::CenterOnly,
        }
    }

    /// Independent box filter for an integer factor.
    fn block_mean(src: &RgbImage, f: u32) -> RgbImage {
        RgbImage::from_fn(src.width() / f, src.height() / f, |x, y| {
            let mut s = [0u32; 3];
            for dy in 0..f {
                for dx in 0..f {
                    let p = src.get_pixel(x * f + dx, y * f + dy);
                    for c in 0..3 {
                        s[c] += u32::from(p[c]);
                    }
                }
            }
            let n = f * f;
            Rgb(s.map(|v| ((v + n / 2) / n) as u8))
        })
    }

    #[test]
    fn export_names_and_resize_path() {
        let l0 = checker(256);
        let pyr = SlidePyramid::from_levels("s", vec![l0.clone()], 40.0, None).unwrap();
        let pc = coords(&pyr, 20.0, 32, (0..4).flat_map(|j| (0..4).map(move |i| (i * 64, j * 64))).collect());
        assert!(pc.plan.resize_needed);
        let dir = tempfile::tempdir().unwrap();
        let rep = export_patches(&pyr, &pc, dir.path(), &ExportOptions::default()).unwrap();
        assert_eq!((rep.written, rep.failures.len()), (16, 0));
        assert!(export_complete(&pc, dir.path()));
        let got = image::open(dir.path().join("s_x64_y128.png")).unwrap().into_rgb8();
        let want = block_mean(&crate::pyramid::crop(&l0, 64, 128, 64, 64), 2);
        assert_eq!(got, want);
        let rerun = export_patches(&pyr, &pc, dir.path(), &ExportOptions::default()).unwrap();
        assert_eq!((rerun.written, rerun.skipped), (0, 16));
    }

    #[test]
    fn constant_patch_and_failures() {
        let pyr = SlidePyramid::from_levels("s", vec![RgbImage::from_pixel(64, 64, Rgb([10, 20, 30]))], 20.0, None).unwrap();
        let pc = coords(&pyr, 20.0, 16, vec![(0, 0), (100, 100)]);
        let dir = tempfile::tempdir().unwrap();
        let rep = export_patches(&pyr, &pc, dir.path(), &ExportOptions { writers: 2, queue: 1, skip_existing: false }).unwrap();
        assert_eq!(rep.written, 1);
        assert_eq!(rep.failures.len(), 1);
        assert!(!export_complete(&pc, dir.path()));
        let img = image::open(dir.path().join("s_x0_y0.png")).unwrap().into_rgb8();
        assert!(img.pixels().all(|p| p.0 == [10, 20, 30]));
    }

    #[test]
    fn overshooting_window_is_shifted_back() {
        // level 1 rounds 33.9 down to 33 and the read size 9.6 rounds up to 10
        let meta = crate::pyramid::PyramidMeta {
            slide_id: "s".into(),
            level_dims: vec![(339, 339), (33, 33)],
            level_downsamples: vec![1.0, 10.0],
            objective_power: 40.0,
            mpp: None,
        };
        let l1 = crate::pyramid::resample::area_resize(&checker(339), 33, 33);
        let pyr = SlidePyramid::from_parts(meta, vec![checker(339), l1]).unwrap();
        let plan = plan_read(pyr.meta(), 2.5, 6, 0).unwrap();
        assert_eq!((plan.level, plan.level0_footprint_px, plan.read_size_at_level_px), (1, 96, 10));
        assert!(pyr.read_region(1, 243, 243, 10, 10).is_err());
        assert_eq!(read_patch(&pyr, &plan, (243, 243)).unwrap().dimensions(), (6, 6));
    }

    #[test]
    fn embedding_rows_follow_coords() {
        let pyr = SlidePyramid::from_levels(
            "s",
            vec![RgbImage::from_fn(32, 16, |x, _| if x < 16 { Rgb([255, 0, 0]) } else { Rgb([0, 0, 255]) })],
            20.0,
            None,
        )
        .unwrap();
        let pc = coords(&pyr, 20.0, 16, vec![(0, 0), (16, 0)]);
        let f = embed_patches(&pyr, &pc, &MeanRgb).unwrap();
        assert_eq!(f.rows(), 2);
        assert_eq!(f.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(f.row(1), &[0.0, 0.0, 1.0]);
    }
}
