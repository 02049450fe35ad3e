//! Read planning and patch grid generation.
//!
//! Probes are sampled at pixel centres: the centre probe is the centre of
//! pixel `(x + f/2, y + f/2)` and each corner probe is the centre of the
//! footprint's corner pixel moved one pixel inwards, for a footprint of side
//! `f` at `(x, y)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::PyramidMeta;
use crate::vectorize::{ContourIndex, ContourSet, Point, Space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptMode {
    CenterOnly,
    #[default]
    CenterOrAnyCorner,
    AllCorners,
}

impl AcceptMode {
    pub const ALL: [AcceptMode; 3] = [AcceptMode::CenterOnly, AcceptMode::CenterOrAnyCorner, AcceptMode::AllCorners];

    pub fn as_str(self) -> &'static str {
        match self {
            AcceptMode::CenterOnly => "center_only",
            AcceptMode::CenterOrAnyCorner => "center_or_any_corner",
            AcceptMode::AllCorners => "all_corners",
        }
    }
}

impl fmt::Display for AcceptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AcceptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AcceptMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown accept mode `{s}`")))
    }
}

/// How patches at a target magnification are read from the pyramid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadPlan {
    pub target_magnification: f64,
    pub objective_power: f64,
    /// Output patch edge in pixels.
    pub patch_size_px: u32,
    pub overlap_px: u32,
    pub level: usize,
    pub read_size_at_level_px: u32,
    pub level0_footprint_px: u32,
    pub resize_needed: bool,
}

impl ReadPlan {
    /// Level-0 scale of one output pixel.
    pub fn scale(&self) -> f64 {
        self.objective_power / self.target_magnification
    }

    /// Grid step in level-0 pixels.
    pub fn step_px(&self) -> u32 {
        ((f64::from(self.patch_size_px - self.overlap_px) * self.scale()).round() as u32).max(1)
    }
}

pub fn plan_read(meta: &PyramidMeta, target_mag: f64, patch_size: u32, overlap: u32) -> Result<ReadPlan> {
    if !(target_mag > 0.0) {
        return Err(Error::InvalidParam(format!("target magnification {target_mag} must be positive")));
    }
    if target_mag > meta.objective_power + 1e-9 {
        return Err(Error::MagnificationUnavailable { target: target_mag, objective: meta.objective_power });
    }
    if patch_size == 0 {
        return Err(Error::InvalidParam("patch size must be positive".into()));
    }
    if overlap >= patch_size {
        return Err(Error::InvalidParam(format!("overlap {overlap} must be smaller than patch size {patch_size}")));
    }
    let desired = meta.objective_power / target_mag;
    let level = meta.best_level_for_downsample(desired);
    let footprint = (f64::from(patch_size) * desired).round() as u32;
    let read = ((f64::from(footprint) / meta.level_downsamples[level]).round() as u32).max(1);
    Ok(ReadPlan {
        target_magnification: target_mag,
        objective_power: meta.objective_power,
        patch_size_px: patch_size,
        overlap_px: overlap,
        level,
        read_size_at_level_px: read,
        level0_footprint_px: footprint,
        resize_needed: read != patch_size,
    })
}

/// Accepted patch top-left corners (level 0) and how to read them.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCoords {
    pub slide_id: String,
    pub coords: Vec<(i64, i64)>,
    pub plan: ReadPlan,
    pub accept_mode: AcceptMode,
}

impl PatchCoords {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Centre probe followed by the four inset corner probes.
pub fn probe_points(top_left: (i64, i64), footprint: u32) -> [Point; 5] {
    let f = i64::from(footprint);
    let inset = if f >= 3 { 1 } else { 0 };
    let (x, y) = top_left;
    let c = |px: i64, py: i64| (px as f64 + 0.5, py as f64 + 0.5);
    [
        c(x + f / 2, y + f / 2),
        c(x + inset, y + inset),
        c(x + f - 1 - inset, y + inset),
        c(x + inset, y + f - 1 - inset),
        c(x + f - 1 - inset, y + f - 1 - inset),
    ]
}

/// Probe rule shared by both entry points; `inside` answers point queries.
pub fn accept_probes(probes: &[Point; 5], mode: AcceptMode, mut inside: impl FnMut(Point) -> bool) -> bool {
    match mode {
        AcceptMode::CenterOnly => inside(probes[0]),
        AcceptMode::CenterOrAnyCorner => probes.iter().any(|&p| inside(p)),
        AcceptMode::AllCorners => probes.iter().all(|&p| inside(p)),
    }
}

pub fn candidate_accepted(cs: &ContourSet, top_left: (i64, i64), plan: &ReadPlan, mode: AcceptMode) -> bool {
    let probes = probe_points(top_left, plan.level0_footprint_px);
    accept_probes(&probes, mode, |p| crate::vectorize::point_in_region(cs, p))
}

fn accepted_indexed(index: &ContourIndex, top_left: (i64, i64), footprint: u32, mode: AcceptMode) -> bool {
    accept_probes(&probe_points(top_left, footprint), mode, |p| index.contains(p))
}

/// Walk a regular grid over each region's bounding box (anchored at the box
/// minimum) and keep candidates that pass the probe test and lie inside the
/// slide. Output is deduplicated and sorted by `(y, x)`.
pub fn generate_grid(
    cs: &ContourSet,
    slide_id: &str,
    plan: &ReadPlan,
    mode: AcceptMode,
    level0_dims: (u32, u32),
) -> Result<PatchCoords> {
    if cs.space != Space::Level0 && !cs.is_empty() {
        return Err(Error::InvalidParam("grid generation needs level-0 contours".into()));
    }
    let fp = i64::from(plan.level0_footprint_px);
    let step = i64::from(plan.step_px());
    let (w, h) = (i64::from(level0_dims.0), i64::from(level0_dims.1));
    let index = cs.index();
    let mut seen: BTreeSet<(i64, i64)> = BTreeSet::new();
    for region in &cs.regions {
        let bb = region.exterior.bbox();
        let (x0, y0) = (bb.min_x.floor() as i64, bb.min_y.floor() as i64);
        let mut y = y0;
        while (y as f64) < bb.max_y {
            let mut x = x0;
            while (x as f64) < bb.max_x {
                if x >= 0 && y >= 0 && x + fp <= w && y + fp <= h && !seen.contains(&(y, x)) && accepted_indexed(&index, (x, y), plan.level0_footprint_px, mode) {
                    seen.insert((y, x));
                }
                x += step;
            }
            y += step;
        }
    }
    Ok(PatchCoords {
        slide_id: slide_id.to_owned(),
        coords: seen.into_iter().map(|(y, x)| (x, y)).collect(),
        plan: plan.clone(),
        accept_mode: mode,
    })
}
