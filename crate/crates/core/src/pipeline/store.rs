//! Per-slide HDF5 coordinate store.
//!
//! Layout: `/coords` is an N×2 i64 dataset of level-0 top-left corners
//! carrying the read-plan attributes; `/features/{encoder}/feats` is an
//! N×D f32 dataset with a `dim` attribute. Object timestamps are disabled
//! so identical content gives identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use hdf5::types::VarLenUnicode;
use hdf5::{Dataset, File, Group, H5Type, Location};

use crate::error::{Error, Result};
use crate::grid::{AcceptMode, PatchCoords, ReadPlan};
use crate::io::atomic_write;

pub const COORDS: &str = "coords";
pub const FEATURES: &str = "features";
pub const FEATS: &str = "feats";

/// Row-major N×dim feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordStore {
    pub coords: PatchCoords,
    pub features: BTreeMap<String, FeatureMatrix>,
}

fn corrupt(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::StoreCorrupt(format!("{}: {what}", path.display()))
}

fn put_attr<T: H5Type>(loc: &Location, name: &str, v: &T) -> Result<()> {
    loc.new_attr::<T>().create(name)?.write_scalar(v)?;
    Ok(())
}

fn put_str(loc: &Location, name: &str, v: &str) -> Result<()> {
    let s: VarLenUnicode = v.parse().map_err(|e| Error::InvalidParam(format!("attribute {name}: {e}")))?;
    put_attr(loc, name, &s)
}

fn create_2d<T: H5Type>(parent: &Group, name: &str, rows: usize, cols: usize, data: &[T]) -> Result<Dataset> {
    let ds = parent.new_dataset::<T>().obj_track_times(false).shape((rows, cols)).create(name)?;
    if !data.is_empty() {
        ds.write_raw(data)?;
    }
    Ok(ds)
}

pub fn write_store(path: &Path, store: &CoordStore) -> Result<()> {
    let pc = &store.coords;
    for (name, fm) in &store.features {
        if fm.dim == 0 || fm.data.len() != fm.dim * pc.len() {
            return Err(Error::InvalidParam(format!(
                "feature group {name} has {} values for {} coords of dim {}",
                fm.data.len(),
                pc.len(),
                fm.dim
            )));
        }
    }
    quiet();
    atomic_write(path, |tmp| {
        let file = File::with_options().with_fcpl(|p| p.obj_track_times(false)).create(tmp)?;
        let flat: Vec<i64> = pc.coords.iter().flat_map(|&(x, y)| [x, y]).collect();
        let ds = create_2d(&file, COORDS, pc.len(), 2, &flat)?;
        let plan = &pc.plan;
        put_attr(&ds, "patch_size", &i64::from(plan.patch_size_px))?;
        put_attr(&ds, "patch_level", &(plan.level as i64))?;
        put_attr(&ds, "level0_footprint", &i64::from(plan.level0_footprint_px))?;
        put_attr(&ds, "target_magnification", &plan.target_magnification)?;
        put_attr(&ds, "objective_power", &plan.objective_power)?;
        put_attr(&ds, "overlap", &i64::from(plan.overlap_px))?;
        put_attr(&ds, "read_size_at_level", &i64::from(plan.read_size_at_level_px))?;
        put_attr(&ds, "resize_needed", &u8::from(plan.resize_needed))?;
        put_str(&ds, "slide_id", &pc.slide_id)?;
        put_str(&ds, "accept_mode", pc.accept_mode.as_str())?;
        if !store.features.is_empty() {
            let root = file.create_group(FEATURES)?;
            for (name, fm) in &store.features {
                let g = root.create_group(name)?;
                let ds = create_2d(&g, FEATS, fm.rows(), fm.dim, &fm.data)?;
                put_attr(&ds, "dim", &(fm.dim as i64))?;
            }
        }
        file.flush()?;
        file.close()?;
        Ok(())
    })
}

pub fn write_coords(path: &Path, pc: &PatchCoords) -> Result<()> {
    write_store(path, &CoordStore { coords: pc.clone(), features: BTreeMap::new() })
}

fn get_i64(path: &Path, ds: &Dataset, name: &str) -> Result<i64> {
    ds.attr(name)
        .and_then(|a| a.read_scalar::<i64>())
        .map_err(|e| corrupt(path, format!("attribute {name}: {e}")))
}

fn get_u32(path: &Path, ds: &Dataset, name: &str) -> Result<u32> {
    u32::try_from(get_i64(path, ds, name)?).map_err(|_| corrupt(path, format!("attribute {name} out of range")))
}

fn get_f64(path: &Path, ds: &Dataset, name: &str) -> Result<f64> {
    ds.attr(name)
        .and_then(|a| a.read_scalar::<f64>())
        .map_err(|e| corrupt(path, format!("attribute {name}: {e}")))
}

fn get_str(path: &Path, ds: &Dataset, name: &str) -> Result<String> {
    ds.attr(name)
        .and_then(|a| a.read_scalar::<VarLenUnicode>())
        .map(|s| s.as_str().to_owned())
        .map_err(|e| corrupt(path, format!("attribute {name}: {e}")))
}

/// The library's error printer is per thread; failures are reported through
/// `Result` instead.
fn quiet() {
    hdf5::silence_errors(true);
}

fn open(path: &Path) -> Result<File> {
    quiet();
    File::open(path).map_err(|e| corrupt(path, e))
}

fn read_coords_from(path: &Path, file: &File) -> Result<PatchCoords> {
    let ds = file.dataset(COORDS).map_err(|e| corrupt(path, format!("missing /{COORDS}: {e}")))?;
    let shape = ds.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(corrupt(path, format!("/{COORDS} has shape {shape:?}")));
    }
    let flat: Vec<i64> = if shape[0] == 0 {
        Vec::new()
    } else {
        ds.read_raw::<i64>().map_err(|e| corrupt(path, e))?
    };
    let plan = ReadPlan {
        target_magnification: get_f64(path, &ds, "target_magnification")?,
        objective_power: get_f64(path, &ds, "objective_power")?,
        patch_size_px: get_u32(path, &ds, "patch_size")?,
        overlap_px: get_u32(path, &ds, "overlap")?,
        level: get_u32(path, &ds, "patch_level")? as usize,
        read_size_at_level_px: get_u32(path, &ds, "read_size_at_level")?,
        level0_footprint_px: get_u32(path, &ds, "level0_footprint")?,
        resize_needed: ds
            .attr("resize_needed")
            .and_then(|a| a.read_scalar::<u8>())
            .map_err(|e| corrupt(path, format!("attribute resize_needed: {e}")))?
            != 0,
    };
    let accept_mode: AcceptMode = get_str(path, &ds, "accept_mode")?.parse().map_err(|e| corrupt(path, e))?;
    Ok(PatchCoords {
        slide_id: get_str(path, &ds, "slide_id")?,
        coords: flat.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
        plan,
        accept_mode,
    })
}

fn read_feature_from(path: &Path, file: &File, name: &str, n: usize) -> Result<Option<FeatureMatrix>> {
    if !file.link_exists(FEATURES) {
        return Ok(None);
    }
    let root = file.group(FEATURES)?;
    if !root.link_exists(name) {
        return Ok(None);
    }
    let ds = root
        .group(name)
        .and_then(|g| g.dataset(FEATS))
        .map_err(|e| corrupt(path, format!("feature group {name}: {e}")))?;
    let dim = get_i64(path, &ds, "dim")?;
    let shape = ds.shape();
    if dim <= 0 || shape != [n, dim as usize] {
        return Err(corrupt(path, format!("feature group {name} has shape {shape:?}, dim {dim}, {n} coords")));
    }
    let data = if n == 0 { Vec::new() } else { ds.read_raw::<f32>().map_err(|e| corrupt(path, e))? };
    Ok(Some(FeatureMatrix { dim: dim as usize, data }))
}

pub fn read_coords(path: &Path) -> Result<PatchCoords> {
    read_coords_from(path, &open(path)?)
}

/// Features stored under `name`, if present and row-aligned with the coords.
pub fn read_features(path: &Path, name: &str) -> Result<Option<FeatureMatrix>> {
    let file = open(path)?;
    let n = read_coords_from(path, &file)?.len();
    read_feature_from(path, &file, name, n)
}

pub fn read_store(path: &Path) -> Result<CoordStore> {
    let file = open(path)?;
    let coords = read_coords_from(path, &file)?;
    let mut features = BTreeMap::new();
    if file.link_exists(FEATURES) {
        for name in file.group(FEATURES)?.member_names()? {
            if let Some(fm) = read_feature_from(path, &file, &name, coords.len())? {
                features.insert(name, fm);
            }
        }
    }
    Ok(CoordStore { coords, features })
}
