//! Argument parsing and command execution for the `wsiprep` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use wsiprep_core::detect::{DetectorParams, ThresholdMode};
use wsiprep_core::eval::{confusion_counts, metrics, report_jsonl, summarize, SlideEval};
use wsiprep_core::grid::AcceptMode;
use wsiprep_core::pipeline::batch::discover_slides;
use wsiprep_core::pipeline::encoders::EncoderRegistry;
use wsiprep_core::pipeline::slide::load_mask_png;
use wsiprep_core::pipeline::{dry_run_plan, run_batch, BatchReport, DetectorKind, PipelineConfig, SlideStatus};
use wsiprep_core::stats::StatsParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum UsageError {
    /// Also carries `--help` and `--version` output, which exit 0.
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Invalid(String),
}

impl UsageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            UsageError::Clap(e) if !e.use_stderr() => EXIT_OK,
            _ => EXIT_USAGE,
        }
    }

    /// Print the message on the stream clap would use.
    pub fn print(&self) {
        match self {
            UsageError::Clap(e) => {
                let _ = e.print();
            }
            UsageError::Invalid(m) => eprintln!("error: {m}\n\nFor more information, try '--help'."),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wsiprep", version, about = "Whole-slide image preprocessing: tissue masks, contours, patch grids, features and QC")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Tissue masks, contours and mask/contour overlays only.
    Segment(RunArgs),
    /// Segmentation plus patch coordinate stores.
    Coords(RunArgs),
    /// Coordinates plus exported patch PNGs.
    Patch(RunArgs),
    /// Coordinates plus patch features.
    Embed(RunArgs),
    /// Segmentation plus per-slide statistics and stats.jsonl.
    Stats(RunArgs),
    /// Compare predicted masks with ground-truth masks.
    Eval(EvalArgs),
    /// Every stage; images and features when requested.
    All(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorArg {
    HsvOtsu,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ThresholdArg {
    Otsu,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AcceptArg {
    CenterOnly,
    CenterOrAnyCorner,
    AllCorners,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Slide files, pyramid directories, or directories containing them
    #[arg(long, short, required = true, num_args = 1.., env = "WSIPREP_INPUT")]
    input: Vec<PathBuf>,
    /// Output root
    #[arg(long, short, env = "WSIPREP_OUTPUT", default_value = "wsiprep_out")]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = DetectorArg::HsvOtsu)]
    detector: DetectorArg,
    /// Directory of `{slide_id}.png` masks for the external detector
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    /// Target magnification of patches
    #[arg(long, default_value_t = 20.0)]
    mag: f64,
    #[arg(long, default_value_t = 512)]
    patch_size: u32,
    /// Overlap between neighbouring patches, in output pixels
    #[arg(long, default_value_t = 0)]
    overlap: u32,
    #[arg(long, value_enum, default_value_t = AcceptArg::CenterOrAnyCorner)]
    accept_mode: AcceptArg,
    /// Minimum region and hole area in thumbnail pixels [default: auto, from mask size]
    #[arg(long)]
    min_area: Option<f64>,
    /// Douglas-Peucker tolerance for the exported contours, thumbnail pixels [default: off]
    #[arg(long)]
    simplify: Option<f64>,
    /// Slides processed concurrently
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Cap on concurrently open slides
    #[arg(long, default_value_t = 4)]
    max_open_slides: usize,
    /// Objective power of the detection thumbnail
    #[arg(long, default_value_t = 1.25)]
    thumb_power: f64,
    /// Export patch PNGs
    #[arg(long)]
    save_images: bool,
    /// Comma-separated encoder names (built-in: mean_rgb, rand_proj_64) [default: none; mean_rgb for `embed`]
    #[arg(long, value_delimiter = ',')]
    encoders: Vec<String>,
    /// Reuse valid outputs from an earlier run
    #[arg(long)]
    resume: bool,
    /// Seed for statistics sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the read plan per slide without reading pixels
    #[arg(long)]
    dry_run: bool,
    /// Machine-readable summary on stdout
    #[arg(long)]
    json: bool,
    /// Seconds after which another run's lock is considered stale
    #[arg(long, default_value_t = 3600)]
    lock_ttl: u64,
    /// Median filter side length (odd)
    #[arg(long, default_value_t = 7)]
    median_kernel: u32,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Otsu)]
    threshold: ThresholdArg,
    /// Saturation threshold used with `--threshold fixed`
    #[arg(long, default_value_t = 8)]
    fixed_threshold: u8,
    /// Closing kernel side length
    #[arg(long, default_value_t = 4)]
    close_kernel: u32,
    /// Tissue objects smaller than this many thumbnail pixels are removed
    #[arg(long, default_value_t = 16)]
    min_object: u32,
    /// Holes up to this many thumbnail pixels are filled
    #[arg(long, default_value_t = 16)]
    max_hole: u32,
    /// Writer threads for patch export
    #[arg(long, default_value_t = 4)]
    export_writers: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted masks, `{slide_id}_mask.png` or `{slide_id}.png`
    #[arg(long)]
    pred_dir: PathBuf,
    /// Ground-truth masks, `{slide_id}.png` or `{slide_id}_mask.png`
    #[arg(long)]
    gt_dir: PathBuf,
    /// Write the JSON-lines report here [default: stdout only with --json]
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Segment,
    Coords,
    Patch,
    Embed,
    Stats,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run { stage: Stage, inputs: Vec<PathBuf>, cfg: PipelineConfig, dry_run: bool, json: bool },
    Eval { pred_dir: PathBuf, gt_dir: PathBuf, report: Option<PathBuf>, json: bool },
}

impl Command {
    pub fn config(&self) -> Option<&PipelineConfig> {
        match self {
            Command::Run { cfg, .. } => Some(cfg),
            Command::Eval { .. } => None,
        }
    }
}

/// Parse `argv` (program name first) and reject inconsistent flag sets
/// before anything touches a slide.
pub fn parse_and_validate<I, T>(argv: I) -> Result<Command, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (stage, a) = match cli.command {
        CliCommand::Eval(e) => {
            return Ok(Command::Eval { pred_dir: e.pred_dir, gt_dir: e.gt_dir, report: e.report, json: e.json });
        }
        CliCommand::Segment(a) => (Stage::Segment, a),
        CliCommand::Coords(a) => (Stage::Coords, a),
        CliCommand::Patch(a) => (Stage::Patch, a),
        CliCommand::Embed(a) => (Stage::Embed, a),
        CliCommand::Stats(a) => (Stage::Stats, a),
        CliCommand::All(a) => (Stage::All, a),
    };
    let invalid = |m: &str| Err(UsageError::Invalid(m.to_owned()));
    if a.detector == DetectorArg::External && a.mask_dir.is_none() {
        return invalid("--detector external requires --mask-dir");
    }
    if a.mask_dir.is_some() && a.detector != DetectorArg::External {
        return invalid("--mask-dir is only used with --detector external");
    }
    if matches!(stage, Stage::Segment | Stage::Stats) && (a.save_images || !a.encoders.is_empty()) {
        return invalid("--save-images and --encoders need a stage that extracts coordinates");
    }
    let mut encoders = a.encoders;
    encoders.retain(|e| !e.is_empty());
    if stage == Stage::Embed && encoders.is_empty() {
        encoders.push("mean_rgb".into());
    }
    let registry = EncoderRegistry::default();
    if let Some(bad) = encoders.iter().find(|e| registry.get(e).is_err()) {
        return Err(UsageError::Invalid(format!("unknown encoder `{bad}`; available: {}", registry.names().collect::<Vec<_>>().join(", "))));
    }
    let cfg = PipelineConfig {
        output: a.output,
        thumbnail_target_power: a.thumb_power,
        detector: match a.detector {
            DetectorArg::HsvOtsu => DetectorKind::HsvOtsu,
            DetectorArg::External => DetectorKind::External,
        },
        detector_params: DetectorParams {
            median_kernel_px: a.median_kernel,
            threshold_mode: match a.threshold {
                ThresholdArg::Otsu => ThresholdMode::Otsu,
                ThresholdArg::Fixed => ThresholdMode::Fixed,
            },
            fixed_threshold: a.fixed_threshold,
            close_kernel_px: a.close_kernel,
            min_object_px: a.min_object,
            max_hole_px: a.max_hole,
        },
        external_mask_dir: a.mask_dir,
        target_mag: a.mag,
        patch_size: a.patch_size,
        overlap: a.overlap,
        accept_mode: match a.accept_mode {
            AcceptArg::CenterOnly => AcceptMode::CenterOnly,
            AcceptArg::CenterOrAnyCorner => AcceptMode::CenterOrAnyCorner,
            AcceptArg::AllCorners => AcceptMode::AllCorners,
        },
        min_area: a.min_area,
        simplify: a.simplify,
        workers: a.workers,
        max_open_slides: a.max_open_slides,
        coords: !matches!(stage, Stage::Segment | Stage::Stats),
        save_images: a.save_images || stage == Stage::Patch,
        encoders,
        stats: matches!(stage, Stage::Stats | Stage::All),
        stats_params: StatsParams { seed: a.seed, ..StatsParams::default() },
        resume: a.resume,
        lock_ttl: Duration::from_secs(a.lock_ttl),
        export_writers: a.export_writers.max(1),
    };
    if let Some(bad) = cfg.simplify.filter(|t| !(*t >= 0.0)) {
        return Err(UsageError::Invalid(format!("--simplify must be non-negative, got {bad}")));
    }
    cfg.validate().map_err(|e| UsageError::Invalid(e.to_string()))?;
    Ok(Command::Run { stage, inputs: a.input, cfg, dry_run: a.dry_run, json: a.json })
}

/// Run a parsed command and return the process exit code.
pub fn execute(cmd: &Command) -> i32 {
    match cmd {
        Command::Run { inputs, cfg, dry_run: true, json, .. } => dry_run(inputs, cfg, *json),
        Command::Run { inputs, cfg, json, .. } => run(inputs, cfg, *json),
        Command::Eval { pred_dir, gt_dir, report, json } => eval(pred_dir, gt_dir, report.as_deref(), *json),
    }
}

fn slides_or_usage(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, i32> {
    match discover_slides(inputs) {
        Ok(s) if !s.is_empty() => Ok(s),
        Ok(_) => {
            eprintln!("error: no slides found in the given inputs");
            Err(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(EXIT_USAGE)
        }
    }
}

fn dry_run(inputs: &[PathBuf], cfg: &PipelineConfig, json: bool) -> i32 {
    let slides = match slides_or_usage(inputs) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let mut failed = false;
    let mut records = Vec::new();
    for path in &slides {
        match dry_run_plan(cfg, path) {
            Ok((meta, plan)) => {
                eprintln!(
                    "{}: level {} read {}px footprint {}px resize {} ({}x{} at {}x)",
                    meta.slide_id,
                    plan.level,
                    plan.read_size_at_level_px,
                    plan.level0_footprint_px,
                    plan.resize_needed,
                    meta.level0_dims().0,
                    meta.level0_dims().1,
                    meta.objective_power
                );
                records.push(json!({"slide_id": meta.slide_id, "path": path, "plan": plan}));
            }
            Err(e) => {
                failed = true;
                eprintln!("{}: {e}", path.display());
                records.push(json!({"path": path, "error": e.to_string()}));
            }
        }
    }
    if json {
        println!("{}", json!({ "dry_run": records }));
    }
    if failed {
        EXIT_FAILED
    } else {
        EXIT_OK
    }
}

fn stage_totals(report: &BatchReport) -> BTreeMap<String, f64> {
    let mut totals = BTreeMap::new();
    for r in &report.results {
        for (k, v) in &r.timings {
            *totals.entry(k.clone()).or_insert(0.0) += v;
        }
    }
    totals
}

fn run(inputs: &[PathBuf], cfg: &PipelineConfig, json: bool) -> i32 {
    let slides = match slides_or_usage(inputs) {
        Ok(s) => s,
        Err(code) => return code,
    };
    eprintln!("processing {} slide(s) with {} worker(s)", slides.len(), cfg.workers);
    let report = match run_batch(cfg, &slides, &EncoderRegistry::default()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILED;
        }
    };
    for r in &report.results {
        let status = match r.status {
            SlideStatus::Done => "done",
            SlideStatus::Skipped => "skipped",
            SlideStatus::Failed => "FAILED",
        };
        eprintln!("  {:<24} {status:<8} {:>7} patches  {:.2}s", r.slide_id, r.n_patches, r.timings.values().sum::<f64>());
        for w in &r.warnings {
            eprintln!("    warning: {w}");
        }
    }
    let totals = stage_totals(&report);
    let timing: Vec<String> = totals.iter().map(|(k, v)| format!("{k} {v:.2}s")).collect();
    eprintln!(
        "{} done, {} skipped, {} failed, {} patches in {:.2}s (peak open slides {})",
        report.count(SlideStatus::Done),
        report.count(SlideStatus::Skipped),
        report.count(SlideStatus::Failed),
        report.total_patches(),
        report.elapsed_s,
        report.peak_open_slides
    );
    if !timing.is_empty() {
        eprintln!("stage time: {}", timing.join(", "));
    }
    let failures: Vec<_> = report.results.iter().filter(|r| r.status == SlideStatus::Failed).collect();
    for f in &failures {
        eprintln!("failed: {} ({}): {}", f.slide_id, f.path.display(), f.error.as_deref().unwrap_or("unknown error"));
    }
    if json {
        let summary = json!({
            "done": report.count(SlideStatus::Done),
            "skipped": report.count(SlideStatus::Skipped),
            "failed": report.count(SlideStatus::Failed),
            "total_patches": report.total_patches(),
            "stage_seconds": totals,
            "report": report,
        });
        println!("{summary}");
    }
    if failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

fn mask_file(dir: &Path, id: &str, names: [&str; 2]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n.replace("{}", id))).find(|p| p.is_file())
}

/// Pair `{id}_mask.png` / `{id}.png` predictions with ground truth by id.
fn eval(pred_dir: &Path, gt_dir: &Path, report: Option<&Path>, json: bool) -> i32 {
    let entries = match std::fs::read_dir(pred_dir) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {}: {e}", pred_dir.display());
            return EXIT_USAGE;
        }
    };
    let mut ids: Vec<String> = entries
        .flatten()
        .filter_map(|e| e.file_name().to_str().map(str::to_owned))
        .filter_map(|n| n.strip_suffix(".png").map(|s| s.strip_suffix("_mask").unwrap_or(s).to_owned()))
        .collect();
    ids.sort();
    ids.dedup();
    let mut evals = Vec::new();
    let mut failed = Vec::new();
    for id in &ids {
        let outcome = (|| -> Result<SlideEval, String> {
            let pred_path = mask_file(pred_dir, id, ["{}_mask.png", "{}.png"]).ok_or("prediction missing")?;
            let gt_path = mask_file(gt_dir, id, ["{}.png", "{}_mask.png"]).ok_or("no ground truth mask")?;
            let dims = image::image_dimensions(&pred_path).map_err(|e| e.to_string())?;
            let pred = load_mask_png(&pred_path, dims, 1.0).ok_or("unreadable prediction")?;
            let gt = load_mask_png(&gt_path, dims, 1.0).ok_or("ground truth is unreadable or has different dimensions")?;
            let counts = confusion_counts(&pred, &gt).map_err(|e| e.to_string())?;
            Ok(SlideEval { slide_id: id.clone(), counts, metrics: metrics(&counts) })
        })();
        match outcome {
            Ok(e) => evals.push(e),
            Err(msg) => {
                eprintln!("failed: {id}: {msg}");
                failed.push(id.clone());
            }
        }
    }
    let lines = match report_jsonl(&evals) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILED;
        }
    };
    if let Some(path) = report {
        if let Err(e) = wsiprep_core::io::atomic_write_bytes(path, lines.as_bytes()) {
            eprintln!("error: {}: {e}", path.display());
            return EXIT_FAILED;
        }
    }
    let s = summarize(&evals);
    let fmt = |v: Option<f64>| v.map_or("undefined".to_owned(), |v| format!("{v:.4}"));
    eprintln!(
        "{} slide(s): precision {} recall {} f1 {} iou {} (pooled)",
        s.n_slides,
        fmt(s.micro.precision),
        fmt(s.micro.recall),
        fmt(s.micro.f1),
        fmt(s.micro.iou)
    );
    if json {
        print!("{lines}");
    }
    if failed.is_empty() && !ids.is_empty() {
        EXIT_OK
    } else {
        if ids.is_empty() {
            eprintln!("error: no masks found in {}", pred_dir.display());
        }
        EXIT_FAILED
    }
}
