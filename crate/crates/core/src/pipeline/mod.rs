//! Batch orchestration: per-slide processing, locking, resumable outputs.

pub mod batch;
pub mod encoders;
pub mod export;
pub mod lock;
pub mod overlay;
pub mod slide;
pub mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::detect::DetectorParams;
use crate::error::{Error, Result};
use crate::grid::AcceptMode;
use crate::stats::StatsParams;

pub use batch::{run_batch, BatchReport, OpenLimiter};
pub use slide::{dry_run_plan, process_slide, SlideContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    HsvOtsu,
    External,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::HsvOtsu => "hsv-otsu",
            DetectorKind::External => "external",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hsv-otsu" | "hsv_otsu" => Ok(DetectorKind::HsvOtsu),
            "external" => Ok(DetectorKind::External),
            _ => Err(Error::InvalidParam(format!("unknown detector `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub output: PathBuf,
    pub thumbnail_target_power: f64,
    pub detector: DetectorKind,
    pub detector_params: DetectorParams,
    pub external_mask_dir: Option<PathBuf>,
    pub target_mag: f64,
    pub patch_size: u32,
    pub overlap: u32,
    pub accept_mode: AcceptMode,
    /// Fragment and hole threshold in thumbnail pixels; `None` uses
    /// [`crate::vectorize::default_min_area`].
    pub min_area: Option<f64>,
    /// Douglas–Peucker tolerance (thumbnail pixels) for the exported contour file only.
    pub simplify: Option<f64>,
    pub workers: usize,
    pub max_open_slides: usize,
    /// Run the coordinate stage. Off for segmentation-only runs.
    pub coords: bool,
    pub save_images: bool,
    pub encoders: Vec<String>,
    pub stats: bool,
    pub stats_params: StatsParams,
    pub resume: bool,
    pub lock_ttl: Duration,
    pub export_writers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("wsiprep_out"),
            thumbnail_target_power: 1.25,
            detector: DetectorKind::HsvOtsu,
            detector_params: DetectorParams::default(),
            external_mask_dir: None,
            target_mag: 20.0,
            patch_size: 512,
            overlap: 0,
            accept_mode: AcceptMode::CenterOrAnyCorner,
            min_area: None,
            simplify: None,
            workers: 4,
            max_open_slides: 4,
            coords: true,
            save_images: false,
            encoders: Vec::new(),
            stats: false,
            stats_params: StatsParams::default(),
            resume: false,
            lock_ttl: Duration::from_secs(3600),
            export_writers: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.max_open_slides == 0 {
            return bad("max_open_slides must be at least 1".into());
        }
        if self.patch_size == 0 {
            return bad("patch size must be positive".into());
        }
        if self.overlap >= self.patch_size {
            return bad(format!("overlap {} must be smaller than patch size {}", self.overlap, self.patch_size));
        }
        if !(self.target_mag > 0.0) {
            return bad("magnification must be positive".into());
        }
        if !(self.thumbnail_target_power > 0.0) {
            return bad("thumbnail power must be positive".into());
        }
        if self.detector == DetectorKind::External && self.external_mask_dir.is_none() {
            return bad("the external detector needs a mask directory".into());
        }
        if self.min_area.is_some_and(|a| !(a >= 0.0)) {
            return bad("min area must be non-negative".into());
        }
        if (self.save_images || !self.encoders.is_empty()) && !self.coords {
            return bad("patch export and embedding need the coordinate stage".into());
        }
        self.detector_params.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlideStatus {
    Done,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideResult {
    pub slide_id: String,
    pub path: PathBuf,
    pub status: SlideStatus,
    pub n_patches: usize,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    /// Region reads issued against the slide, thumbnail included.
    pub reads: u64,
}

impl SlideResult {
    pub fn new(slide_id: impl Into<String>, path: &Path) -> Self {
        Self {
            slide_id: slide_id.into(),
            path: path.to_path_buf(),
            status: SlideStatus::Done,
            n_patches: 0,
            timings: BTreeMap::new(),
            error: None,
            warnings: Vec::new(),
            reads: 0,
        }
    }

    pub fn failed(slide_id: impl Into<String>, path: &Path, err: impl fmt::Display) -> Self {
        Self { status: SlideStatus::Failed, error: Some(err.to_string()), ..Self::new(slide_id, path) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlayKind {
    Mask,
    Contour,
    Grid,
}

impl OverlayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OverlayKind::Mask => "mask",
            OverlayKind::Contour => "contour",
            OverlayKind::Grid => "grid",
        }
    }
}

/// Output tree under one root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn mask(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}_mask.png"))
    }

    pub fn contours(&self, id: &str) -> PathBuf {
        self.root.join("contours").join(format!("{id}_contours.json"))
    }

    pub fn coords(&self, id: &str) -> PathBuf {
        self.root.join("coords").join(format!("{id}.h5"))
    }

    pub fn overlay(&self, id: &str, kind: OverlayKind) -> PathBuf {
        self.root.join("overlays").join(format!("{id}_{}_overlay.png", kind.as_str()))
    }

    pub fn images(&self, id: &str) -> PathBuf {
        self.root.join("images").join(id)
    }

    pub fn slide_stats(&self, id: &str) -> PathBuf {
        self.root.join("stats").join(format!("{id}.json"))
    }

    pub fn lab_samples(&self, id: &str) -> PathBuf {
        self.root.join("stats").join(format!("{id}_lab.csv"))
    }

    pub fn stats_jsonl(&self) -> PathBuf {
        self.root.join("stats.jsonl")
    }

    pub fn locks(&self) -> PathBuf {
        self.root.join("locks")
    }
}
