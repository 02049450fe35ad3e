//! Worker pool over a slide queue with a global cap on open slides.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::io::atomic_write_bytes;
use crate::pipeline::encoders::{Counted, EncoderRegistry, PatchEncoder};
use crate::pipeline::slide::{process_slide, SlideContext};
use crate::pipeline::{Layout, PipelineConfig, SlideResult, SlideStatus};
use crate::pyramid::probe_slide_id;
use crate::stats::SlideStatistics;

/// Counting semaphore that also records the highest concurrent holding.
#[derive(Debug)]
pub struct OpenLimiter {
    max: usize,
    held: Mutex<usize>,
    cv: Condvar,
    peak: AtomicUsize,
}

pub struct Permit<'a> {
    limiter: &'a OpenLimiter,
}

impl OpenLimiter {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), held: Mutex::new(0), cv: Condvar::new(), peak: AtomicUsize::new(0) }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut held = self.held.lock().unwrap();
        while *held >= self.max {
            held = self.cv.wait(held).unwrap();
        }
        *held += 1;
        self.peak.fetch_max(*held, Ordering::SeqCst);
        Permit { limiter: self }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.held.lock().unwrap() -= 1;
        self.limiter.cv.notify_one();
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchReport {
    /// In input order.
    pub results: Vec<SlideResult>,
    pub peak_open_slides: usize,
    pub encoder_calls: u64,
    pub elapsed_s: f64,
}

impl BatchReport {
    pub fn count(&self, status: SlideStatus) -> usize {
        self.results.iter().filter(|r| r.status == status).count()
    }

    pub fn total_patches(&self) -> usize {
        self.results.iter().map(|r| r.n_patches).sum()
    }

    pub fn total_reads(&self) -> u64 {
        self.results.iter().map(|r| r.reads).sum()
    }

    pub fn any_failed(&self) -> bool {
        self.count(SlideStatus::Failed) > 0
    }
}

/// Expand directories that are not themselves pyramids into their slide
/// entries, sorted by name. Pyramid directories and files pass through.
pub fn discover_slides(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() && !input.join(crate::pyramid::DIR_META_FILE).is_file() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    (p.is_dir() && p.join(crate::pyramid::DIR_META_FILE).is_file())
                        || (p.is_file() && crate::pyramid::is_tiff_path(p))
                })
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

struct CountingRegistry {
    registry: EncoderRegistry,
    counters: Vec<Arc<Counted>>,
}

fn counting(registry: &EncoderRegistry) -> CountingRegistry {
    let mut wrapped = EncoderRegistry::empty();
    let mut counters = Vec::new();
    for name in registry.names() {
        let c = Arc::new(Counted::new(registry.get(name).expect("listed encoder")));
        counters.push(c.clone());
        wrapped.register(c as Arc<dyn PatchEncoder>);
    }
    CountingRegistry { registry: wrapped, counters }
}

/// Process `paths` with `cfg.workers` threads. One slide's failure never
/// affects another; results come back in input order.
pub fn run_batch(cfg: &PipelineConfig, paths: &[PathBuf], registry: &EncoderRegistry) -> Result<BatchReport> {
    cfg.validate()?;
    for name in &cfg.encoders {
        registry.get(name)?;
    }
    let start = Instant::now();
    let layout = Layout::new(&cfg.output);
    std::fs::create_dir_all(&layout.root)?;
    let limiter = OpenLimiter::new(cfg.max_open_slides);
    let counted = counting(registry);
    let ctx = SlideContext { cfg, layout: layout.clone(), registry: &counted.registry, limiter: &limiter };

    // a repeated slide id would race on the same outputs
    let mut seen = HashSet::new();
    let mut duplicate = vec![false; paths.len()];
    for (i, p) in paths.iter().enumerate() {
        if let Ok(id) = probe_slide_id(p) {
            duplicate[i] = !seen.insert(id);
        }
    }

    let (tx, rx) = crossbeam_channel::unbounded::<usize>();
    for i in 0..paths.len() {
        tx.send(i).expect("queue open");
    }
    drop(tx);
    let results: Mutex<Vec<Option<SlideResult>>> = Mutex::new(vec![None; paths.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.min(paths.len().max(1)) {
            let (rx, ctx, results, duplicate) = (rx.clone(), &ctx, &results, &duplicate);
            s.spawn(move || {
                for i in rx {
                    let path = &paths[i];
                    let r = if duplicate[i] {
                        let id = probe_slide_id(path).unwrap_or_default();
                        SlideResult::failed(id, path, "duplicate slide id in batch")
                    } else {
                        process_slide(ctx, path)
                    };
                    log::info!("{} {:?} ({} patches)", r.slide_id, r.status, r.n_patches);
                    results.lock().unwrap()[i] = Some(r);
                }
            });
        }
    });
    let results: Vec<SlideResult> = results.into_inner().unwrap().into_iter().map(|r| r.expect("every slide processed")).collect();

    if cfg.stats {
        write_stats_jsonl(&layout, &results)?;
    }
    Ok(BatchReport {
        results,
        peak_open_slides: limiter.peak(),
        encoder_calls: counted.counters.iter().map(|c| c.calls()).sum(),
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Assemble per-slide statistics into `stats.jsonl` in input order.
fn write_stats_jsonl(layout: &Layout, results: &[SlideResult]) -> Result<()> {
    let mut out = Vec::new();
    let mut written = HashSet::new();
    for r in results {
        if !written.insert(r.slide_id.clone()) {
            continue;
        }
        let Ok(bytes) = std::fs::read(layout.slide_stats(&r.slide_id)) else { continue };
        let stats: SlideStatistics = serde_json::from_slice(&bytes)?;
        out.extend(serde_json::to_vec(&stats)?);
        out.push(b'\n');
    }
    atomic_write_bytes(&layout.stats_jsonl(), &out)
}

/// Convenience for callers holding a single path.
pub fn run_one(cfg: &PipelineConfig, path: &Path) -> Result<SlideResult> {
    let mut report = run_batch(cfg, &[path.to_path_buf()], &EncoderRegistry::default())?;
    Ok(report.results.remove(0))
}
