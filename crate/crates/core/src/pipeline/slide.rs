//! One slide through detection, vectorization, grid, features and export.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::detect::{detect_hsv_otsu, load_external_mask, morphological_cleanup};
use crate::error::{Error, Result};
use crate::grid::{generate_grid, plan_read, PatchCoords, ReadPlan};
use crate::io::{atomic_png_gray, atomic_png_rgb, atomic_write_bytes, partial_path, PARTIAL_SUFFIX};
use crate::mask::TissueMask;
use crate::pipeline::encoders::EncoderRegistry;
use crate::pipeline::export::{embed_patches, export_complete, export_patches, ExportOptions};
use crate::pipeline::lock::try_acquire;
use crate::pipeline::overlay;
use crate::pipeline::store::{read_store, write_store, CoordStore};
use crate::pipeline::{DetectorKind, Layout, OverlayKind, PipelineConfig, SlideResult, SlideStatus};
use crate::pyramid::{open_slide, probe_slide_id, PyramidMeta, RgbImage, SlidePyramid};
use crate::stats::{compute_slide_stats, sample_lab_chroma, write_lab_csv};
use crate::vectorize::{contours_to_geojson, default_min_area, simplify_ring, trace_contours, ContourSet, Region, Space};

use super::batch::OpenLimiter;

/// Shared state for the slides of one batch.
pub struct SlideContext<'a> {
    pub cfg: &'a PipelineConfig,
    pub layout: Layout,
    pub registry: &'a EncoderRegistry,
    pub limiter: &'a OpenLimiter,
}

/// Slide ids become file names, so path syntax is rejected.
pub fn validate_slide_id(id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\', '\0']) {
        return Err(Error::InvalidParam(format!("slide id `{id}` cannot be used as a file name")));
    }
    Ok(())
}

/// Decode a stored 0/255 mask; `None` unless it has exactly `dims`.
pub fn load_mask_png(path: &Path, dims: (u32, u32), thumb_downsample: f64) -> Option<TissueMask> {
    let img = image::open(path).ok()?.into_luma8();
    if img.dimensions() != dims {
        return None;
    }
    let bits = img.as_raw().iter().map(|&v| u8::from(v > 127)).collect();
    TissueMask::from_bits(dims.0, dims.1, bits, thumb_downsample).ok()
}

fn external_mask_path(dir: &Path, id: &str) -> PathBuf {
    let plain = dir.join(format!("{id}.png"));
    if plain.is_file() {
        plain
    } else {
        dir.join(format!("{id}_mask.png"))
    }
}

/// Whether an existing store was produced by this configuration.
fn store_matches(pc: &PatchCoords, cfg: &PipelineConfig, id: &str) -> bool {
    pc.slide_id == id
        && pc.accept_mode == cfg.accept_mode
        && pc.plan.patch_size_px == cfg.patch_size
        && pc.plan.overlap_px == cfg.overlap
        && pc.plan.target_magnification == cfg.target_mag
}

fn final_paths(layout: &Layout, id: &str) -> Vec<PathBuf> {
    vec![
        layout.mask(id),
        layout.contours(id),
        layout.coords(id),
        layout.overlay(id, OverlayKind::Mask),
        layout.overlay(id, OverlayKind::Contour),
        layout.overlay(id, OverlayKind::Grid),
        layout.slide_stats(id),
        layout.lab_samples(id),
    ]
}

/// Remove temporaries left by an interrupted run. Call with the lock held.
fn sweep_partials(layout: &Layout, id: &str) {
    for p in final_paths(layout, id) {
        let _ = fs::remove_file(partial_path(&p));
    }
    if let Ok(entries) = fs::read_dir(layout.images(id)) {
        for e in entries.flatten() {
            if e.file_name().to_string_lossy().ends_with(PARTIAL_SUFFIX) {
                let _ = fs::remove_file(e.path());
            }
        }
    }
}

/// Every requested output exists and validates, so the slide need not be opened.
fn outputs_complete(ctx: &SlideContext<'_>, id: &str) -> bool {
    let (cfg, l) = (ctx.cfg, &ctx.layout);
    let basic = [l.mask(id), l.contours(id), l.overlay(id, OverlayKind::Mask), l.overlay(id, OverlayKind::Contour)];
    if !basic.iter().all(|p| p.is_file()) {
        return false;
    }
    if cfg.stats && !l.slide_stats(id).is_file() {
        return false;
    }
    if !cfg.coords {
        return true;
    }
    if !l.overlay(id, OverlayKind::Grid).is_file() {
        return false;
    }
    let Ok(store) = read_store(&l.coords(id)) else { return false };
    store_matches(&store.coords, cfg, id)
        && cfg.encoders.iter().all(|e| store.features.contains_key(e))
        && (!cfg.save_images || export_complete(&store.coords, &l.images(id)))
}

/// Process one slide: take its lock, then run every configured stage,
/// reusing valid outputs when resuming. Errors never escape; they are
/// recorded in the result.
pub fn process_slide(ctx: &SlideContext<'_>, path: &Path) -> SlideResult {
    let id = match probe_slide_id(path).and_then(|id| validate_slide_id(&id).map(|()| id)) {
        Ok(id) => id,
        Err(e) => return SlideResult::failed(path.display().to_string(), path, e),
    };
    let lock = match try_acquire(&ctx.layout.locks(), &id, ctx.cfg.lock_ttl) {
        Ok(Some(lock)) => lock,
        Ok(None) => {
            let mut r = SlideResult::new(&id, path);
            r.status = SlideStatus::Skipped;
            r.warnings.push("locked by another run".into());
            return r;
        }
        Err(e) => return SlideResult::failed(&id, path, e),
    };
    sweep_partials(&ctx.layout, &id);
    let mut res = SlideResult::new(&id, path);
    if ctx.cfg.resume && outputs_complete(ctx, &id) {
        res.status = SlideStatus::Skipped;
        if let Ok(store) = read_store(&ctx.layout.coords(&id)) {
            res.n_patches = store.coords.len();
        }
        return res;
    }
    if let Err(e) = run_stages(ctx, path, &id, &mut res) {
        log::error!("{id}: {e}");
        res.status = SlideStatus::Failed;
        res.error = Some(e.to_string());
    }
    drop(lock);
    res
}

struct Timer<'r> {
    res: &'r mut SlideResult,
    t: Instant,
}

impl Timer<'_> {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        *self.res.timings.entry(stage.to_owned()).or_default() += (now - self.t).as_secs_f64();
        self.t = now;
    }
}

fn run_stages(ctx: &SlideContext<'_>, path: &Path, id: &str, res: &mut SlideResult) -> Result<()> {
    let (cfg, layout) = (ctx.cfg, &ctx.layout);
    let _permit = ctx.limiter.acquire();
    let mut timer = Timer { res, t: Instant::now() };
    let pyr = open_slide(path)?;
    let ((tw, th), ds) = pyr.meta().thumbnail_dims(cfg.thumbnail_target_power)?;
    let mut thumb: Option<RgbImage> = None;
    let mut thumbnail = |pyr: &SlidePyramid| -> Result<RgbImage> {
        if let Some(t) = &thumb {
            return Ok(t.clone());
        }
        let (t, _) = pyr.get_thumbnail(cfg.thumbnail_target_power)?;
        thumb = Some(t.clone());
        Ok(t)
    };
    let fresh = |p: &Path| !(cfg.resume && p.is_file());
    timer.lap("open");

    // segmentation
    let mask_path = layout.mask(id);
    let reused = if cfg.resume { load_mask_png(&mask_path, (tw, th), ds) } else { None };
    let mask = match reused {
        Some(m) => m,
        None => {
            let det = match cfg.detector {
                DetectorKind::HsvOtsu => detect_hsv_otsu(&thumbnail(&pyr)?, &cfg.detector_params, ds)?,
                DetectorKind::External => {
                    let dir = cfg.external_mask_dir.as_deref().ok_or_else(|| Error::InvalidParam("no mask directory".into()))?;
                    let mut d = load_external_mask(&external_mask_path(dir, id), (tw, th), ds)?;
                    d.mask = morphological_cleanup(&d.mask, &cfg.detector_params);
                    d
                }
            };
            timer.res.warnings.extend(det.warning);
            atomic_png_gray(&mask_path, &det.mask.to_gray(), tw, th)?;
            det.mask
        }
    };
    timer.lap("segment");

    let min_area = cfg.min_area.unwrap_or_else(|| default_min_area(&mask));
    let traced = trace_contours(&mask, min_area);
    let level0 = traced.scaled(ds, Space::Level0);
    let contours_path = layout.contours(id);
    if fresh(&contours_path) {
        let export = match cfg.simplify {
            Some(tol) => simplified(&traced, tol).scaled(ds, Space::Level0),
            None => level0.clone(),
        };
        atomic_write_bytes(&contours_path, &serde_json::to_vec(&contours_to_geojson(&export, id))?)?;
    }
    timer.lap("contours");

    let mut pc = None;
    if cfg.coords {
        let plan = plan_read(pyr.meta(), cfg.target_mag, cfg.patch_size, cfg.overlap)?;
        let store_path = layout.coords(id);
        let existing = read_store(&store_path).ok();
        let coords = match &existing {
            Some(s) if cfg.resume && store_matches(&s.coords, cfg, id) && s.coords.plan == plan => s.coords.clone(),
            _ => generate_grid(&level0, id, &plan, cfg.accept_mode, pyr.meta().level0_dims())?,
        };
        timer.lap("coords");

        // feature groups stay valid while the coordinates are unchanged
        let (mut store, mut dirty) = match existing {
            Some(s) if s.coords == coords => (s, false),
            _ => (CoordStore { coords, features: Default::default() }, true),
        };
        for name in &cfg.encoders {
            if store.features.contains_key(name) {
                continue;
            }
            let enc = ctx.registry.get(name)?;
            let fm = embed_patches(&pyr, &store.coords, enc.as_ref())?;
            store.features.insert(name.clone(), fm);
            dirty = true;
        }
        if dirty {
            write_store(&store_path, &store)?;
        }
        timer.lap("embed");
        timer.res.n_patches = store.coords.len();

        if cfg.save_images {
            let dir = layout.images(id);
            if !(cfg.resume && export_complete(&store.coords, &dir)) {
                let opts = ExportOptions { writers: cfg.export_writers, skip_existing: cfg.resume, ..Default::default() };
                let rep = export_patches(&pyr, &store.coords, &dir, &opts)?;
                if !rep.failures.is_empty() {
                    timer.res.warnings.push(format!("{} patch exports failed, first: {:?}", rep.failures.len(), rep.failures[0]));
                }
            }
            timer.lap("images");
        }
        pc = Some(store.coords);
    }

    let mask_ov = layout.overlay(id, OverlayKind::Mask);
    if fresh(&mask_ov) {
        atomic_png_rgb(&mask_ov, &overlay::mask_overlay(&thumbnail(&pyr)?, &mask))?;
    }
    let contour_ov = layout.overlay(id, OverlayKind::Contour);
    if fresh(&contour_ov) {
        atomic_png_rgb(&contour_ov, &overlay::contour_overlay(&thumbnail(&pyr)?, &level0, ds))?;
    }
    if let Some(pc) = &pc {
        let grid_ov = layout.overlay(id, OverlayKind::Grid);
        if fresh(&grid_ov) {
            atomic_png_rgb(&grid_ov, &overlay::grid_overlay(&thumbnail(&pyr)?, pc, ds))?;
        }
    }
    timer.lap("overlays");

    if cfg.stats && fresh(&layout.slide_stats(id)) {
        let t = thumbnail(&pyr)?;
        let stats = compute_slide_stats(id, &t, &mask, &cfg.detector_params, &cfg.stats_params)?;
        let lab = match sample_lab_chroma(&t, &mask, cfg.stats_params.lab_rate, cfg.stats_params.seed) {
            Ok(v) => v,
            Err(Error::NoTissue) => Vec::new(),
            Err(e) => return Err(e),
        };
        write_lab_csv(&layout.lab_samples(id), &lab)?;
        atomic_write_bytes(&layout.slide_stats(id), &serde_json::to_vec(&stats)?)?;
        timer.lap("stats");
    }
    timer.res.reads = pyr.read_count();
    Ok(())
}

fn simplified(cs: &ContourSet, tol: f64) -> ContourSet {
    ContourSet {
        regions: cs
            .regions
            .iter()
            .map(|r| Region {
                exterior: simplify_ring(&r.exterior, tol),
                holes: r.holes.iter().map(|h| simplify_ring(h, tol)).collect(),
            })
            .collect(),
        ..cs.clone()
    }
}

/// Read plan for a slide from its headers alone.
pub fn dry_run_plan(cfg: &PipelineConfig, path: &Path) -> Result<(PyramidMeta, ReadPlan)> {
    let pyr = open_slide(path)?;
    let plan = plan_read(pyr.meta(), cfg.target_mag, cfg.patch_size, cfg.overlap)?;
    Ok((pyr.meta().clone(), plan))
}
