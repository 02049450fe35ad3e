use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use wsiprep_core::grid::{probe_points, AcceptMode};
use wsiprep_core::pipeline::encoders::EncoderRegistry;
use wsiprep_core::pipeline::lock::try_acquire;
use wsiprep_core::pipeline::slide::load_mask_png;
use wsiprep_core::pipeline::store::{read_coords, read_store};
use wsiprep_core::pipeline::{run_batch, Layout, PipelineConfig, SlideStatus};
use wsiprep_core::synth::{write_synthetic_slide, SlideShapes};

fn small_slide(root: &Path, id: &str, seed: u64) -> PathBuf {
    let dir = root.join(id);
    let shapes = SlideShapes::random(&mut ChaCha8Rng::seed_from_u64(seed), 2048.0, 2048.0);
    write_synthetic_slide(&dir, id, &shapes, (2048, 2048), &[1, 4, 16], 20.0, seed).unwrap();
    dir
}

fn small_cfg(out: &Path) -> PipelineConfig {
    PipelineConfig { output: out.to_path_buf(), patch_size: 256, ..Default::default() }
}

#[test]
fn background_slide_gives_empty_store() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("blank");
    write_synthetic_slide(&dir, "blank", &SlideShapes::default(), (1024, 1024), &[1, 16], 20.0, 0).unwrap();
    let cfg = small_cfg(&tmp.path().join("out"));
    let rep = run_batch(&cfg, &[dir], &EncoderRegistry::default()).unwrap();
    let r = &rep.results[0];
    assert_eq!(r.status, SlideStatus::Done, "{:?}", r.error);
    assert_eq!(r.n_patches, 0);
    let pc = read_coords(&Layout::new(&cfg.output).coords("blank")).unwrap();
    assert!(pc.coords.is_empty());
}

/// Brute-force grid for one tissue component: every candidate anchored at
/// the component's box, probed against the mask raster.
fn oracle_single_component(mask: &wsiprep_core::TissueMask, footprint: i64, step: i64, level0: (i64, i64), mode: AcceptMode) -> Vec<(i64, i64)> {
    let ds = mask.thumb_downsample;
    let (w, h) = mask.dims();
    let on: Vec<(u32, u32)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| mask.get(x, y)).collect();
    let (x0, y0) = (on.iter().map(|p| p.0).min().unwrap(), on.iter().map(|p| p.1).min().unwrap());
    let (x1, y1) = (on.iter().map(|p| p.0).max().unwrap() + 1, on.iter().map(|p| p.1).max().unwrap() + 1);
    let (bx0, by0) = ((f64::from(x0) * ds) as i64, (f64::from(y0) * ds) as i64);
    let (bx1, by1) = ((f64::from(x1) * ds) as i64, (f64::from(y1) * ds) as i64);
    let inside = |(px, py): (f64, f64)| {
        let (tx, ty) = ((px / ds).floor(), (py / ds).floor());
        tx >= 0.0 && ty >= 0.0 && tx < f64::from(w) && ty < f64::from(h) && mask.get(tx as u32, ty as u32)
    };
    let mut out = Vec::new();
    let mut y = by0;
    while y < by1 {
        let mut x = bx0;
        while x < bx1 {
            if x + footprint <= level0.0 && y + footprint <= level0.1 {
                let probes = probe_points((x, y), footprint as u32);
                let ok = match mode {
                    AcceptMode::CenterOnly => inside(probes[0]),
                    AcceptMode::CenterOrAnyCorner => probes.iter().any(|&p| inside(p)),
                    AcceptMode::AllCorners => probes.iter().all(|&p| inside(p)),
                };
                if ok {
                    out.push((x, y));
                }
            }
            x += step;
        }
        y += step;
    }
    out.sort_by_key(|&(x, y)| (y, x));
    out
}

#[test]
fn tissue_block_matches_grid_oracle() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("block");
    let shapes = SlideShapes { rects: vec![(1024.0, 1024.0, 4096.0, 4096.0)], ..Default::default() };
    write_synthetic_slide(&dir, "block", &shapes, (6144, 6144), &[1, 4, 32], 40.0, 7).unwrap();
    let cfg = PipelineConfig { output: tmp.path().join("out"), ..Default::default() };
    let rep = run_batch(&cfg, &[dir], &EncoderRegistry::default()).unwrap();
    let r = &rep.results[0];
    assert_eq!(r.status, SlideStatus::Done, "{:?}", r.error);

    let layout = Layout::new(&cfg.output);
    let mask = load_mask_png(&layout.mask("block"), (192, 192), 32.0).unwrap();
    let pc = read_coords(&layout.coords("block")).unwrap();
    assert_eq!(pc.plan.level0_footprint_px, 1024);
    let expected = oracle_single_component(&mask, 1024, 1024, (6144, 6144), AcceptMode::CenterOrAnyCorner);
    assert_eq!(expected.len(), 16);
    assert_eq!(r.n_patches, expected.len());
    assert_eq!(pc.coords, expected);
}

#[test]
fn failures_are_isolated() {
    let tmp = TempDir::new().unwrap();
    let good = small_slide(tmp.path(), "good", 1);
    let bad = tmp.path().join("bad.tif");
    fs::write(&bad, b"not a tiff at all").unwrap();
    let broken = small_slide(tmp.path(), "broken", 2);
    fs::write(broken.join("level_2.png"), b"garbage").unwrap();
    let cfg = small_cfg(&tmp.path().join("out"));
    let rep = run_batch(&cfg, &[bad, good, broken], &EncoderRegistry::default()).unwrap();
    let st: Vec<_> = rep.results.iter().map(|r| r.status).collect();
    assert_eq!(st, vec![SlideStatus::Failed, SlideStatus::Done, SlideStatus::Failed]);
    assert!(rep.results[0].error.is_some() && rep.results[2].error.is_some());
    assert!(Layout::new(&cfg.output).coords("good").is_file());
    assert!(!Layout::new(&cfg.output).coords("broken").exists());
}

#[test]
fn resume_skips_without_reading() {
    let tmp = TempDir::new().unwrap();
    let slides: Vec<_> = (0..3).map(|i| small_slide(tmp.path(), &format!("s{i}"), i)).collect();
    let cfg = PipelineConfig { save_images: true, stats: true, encoders: vec!["mean_rgb".into()], ..small_cfg(&tmp.path().join("out")) };
    let first = run_batch(&cfg, &slides, &EncoderRegistry::default()).unwrap();
    assert_eq!(first.count(SlideStatus::Done), 3);
    assert!(first.total_reads() > 0);
    let layout = Layout::new(&cfg.output);
    for r in &first.results {
        let n = fs::read_dir(layout.images(&r.slide_id)).unwrap().count();
        assert_eq!(n, r.n_patches + 1, "patches plus completion marker");
    }
    let stats = fs::read_to_string(layout.stats_jsonl()).unwrap();
    assert_eq!(stats.lines().count(), 3);

    let again = run_batch(&PipelineConfig { resume: true, ..cfg }, &slides, &EncoderRegistry::default()).unwrap();
    assert_eq!(again.count(SlideStatus::Skipped), 3);
    assert_eq!(again.total_reads(), 0);
    assert_eq!(again.encoder_calls, 0);
    assert_eq!(again.total_patches(), first.total_patches());
}

#[test]
fn stores_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let slides: Vec<_> = (0..6).map(|i| small_slide(tmp.path(), &format!("w{i}"), 10 + i)).collect();
    let run = |workers: usize, out: &str| {
        let cfg = PipelineConfig { workers, max_open_slides: 2, encoders: vec!["rand_proj_64".into()], ..small_cfg(&tmp.path().join(out)) };
        let rep = run_batch(&cfg, &slides, &EncoderRegistry::default()).unwrap();
        assert!(rep.peak_open_slides <= 2);
        assert!(!rep.any_failed());
        cfg.output
    };
    let (a, b) = (run(1, "one"), run(4, "four"));
    for i in 0..6 {
        let id = format!("w{i}");
        let (la, lb) = (Layout::new(&a), Layout::new(&b));
        assert_eq!(fs::read(la.coords(&id)).unwrap(), fs::read(lb.coords(&id)).unwrap(), "{id}");
        assert_eq!(fs::read(la.mask(&id)).unwrap(), fs::read(lb.mask(&id)).unwrap());
    }
}

#[test]
fn feature_cache_avoids_encoder_calls() {
    let tmp = TempDir::new().unwrap();
    let slide = small_slide(tmp.path(), "f", 5);
    let cfg = PipelineConfig { encoders: vec!["mean_rgb".into(), "rand_proj_64".into()], ..small_cfg(&tmp.path().join("out")) };
    let first = run_batch(&cfg, &[slide.clone()], &EncoderRegistry::default()).unwrap();
    assert!(first.encoder_calls > 0);
    let path = Layout::new(&cfg.output).coords("f");
    let before = fs::read(&path).unwrap();
    let store = read_store(&path).unwrap();
    for fm in store.features.values() {
        assert_eq!(fm.rows(), store.coords.len());
    }
    // not resuming: everything is recomputed except the cached features
    let second = run_batch(&cfg, &[slide], &EncoderRegistry::default()).unwrap();
    assert_eq!(second.results[0].status, SlideStatus::Done);
    assert_eq!(second.encoder_calls, 0);
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn locked_slide_is_skipped() {
    let tmp = TempDir::new().unwrap();
    let slide = small_slide(tmp.path(), "held", 3);
    let cfg = small_cfg(&tmp.path().join("out"));
    let _lock = try_acquire(&Layout::new(&cfg.output).locks(), "held", cfg.lock_ttl).unwrap().unwrap();
    let rep = run_batch(&cfg, &[slide], &EncoderRegistry::default()).unwrap();
    assert_eq!(rep.results[0].status, SlideStatus::Skipped);
    assert!(!Layout::new(&cfg.output).coords("held").exists());
}

#[test]
fn segmentation_only_writes_no_store() {
    let tmp = TempDir::new().unwrap();
    let slide = small_slide(tmp.path(), "seg", 4);
    let cfg = PipelineConfig { coords: false, ..small_cfg(&tmp.path().join("out")) };
    let rep = run_batch(&cfg, &[slide], &EncoderRegistry::default()).unwrap();
    assert_eq!(rep.results[0].status, SlideStatus::Done);
    let l = Layout::new(&cfg.output);
    assert!(l.mask("seg").is_file() && l.contours("seg").is_file());
    assert!(!l.coords("seg").exists());
}
