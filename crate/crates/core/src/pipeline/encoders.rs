//! Patch encoders: a name → dimension → deterministic map from an RGB patch
//! to a feature vector.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::RgbImage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub name: String,
    pub output_dim: usize,
    pub deterministic: bool,
}

pub trait PatchEncoder: Send + Sync {
    fn spec(&self) -> EncoderSpec;
    /// Returns `spec().output_dim` values.
    fn encode(&self, patch: &RgbImage) -> Vec<f32>;
}

/// Channel means scaled to `[0, 1]`.
#[derive(Debug, Default, Clone, Copy)]
pub struct MeanRgb;

impl PatchEncoder for MeanRgb {
    fn spec(&self) -> EncoderSpec {
        EncoderSpec { name: "mean_rgb".into(), output_dim: 3, deterministic: true }
    }

    fn encode(&self, patch: &RgbImage) -> Vec<f32> {
        let mut sums = [0u64; 3];
        for p in patch.pixels() {
            for c in 0..3 {
                sums[c] += u64::from(p.0[c]);
            }
        }
        let n = (patch.width() as f64 * patch.height() as f64).max(1.0);
        sums.iter().map(|&s| (s as f64 / n / 255.0) as f32).collect()
    }
}

pub const RAND_PROJ_SEED: u64 = 0x5eed_0f_7a7c_4e55;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dense ±1 random projection of the flattened patch (values in `[0, 1]`),
/// scaled by `1/sqrt(n)`. Entry `(k, i)` of the projection matrix is bit
/// `k` of `splitmix64(seed ^ i)`, so the matrix is never materialized.
#[derive(Debug, Clone, Copy)]
pub struct RandProj64 {
    pub seed: u64,
}

impl Default for RandProj64 {
    fn default() -> Self {
        Self { seed: RAND_PROJ_SEED }
    }
}

impl PatchEncoder for RandProj64 {
    fn spec(&self) -> EncoderSpec {
        EncoderSpec { name: "rand_proj_64".into(), output_dim: 64, deterministic: true }
    }

    fn encode(&self, patch: &RgbImage) -> Vec<f32> {
        let raw = patch.as_raw();
        let mut acc = [0f32; 64];
        for (i, &v) in raw.iter().enumerate() {
            let bits = splitmix64(self.seed ^ i as u64);
            let v = f32::from(v) / 255.0;
            for (k, a) in acc.iter_mut().enumerate() {
                // branch-free ±v
                let sign = ((bits >> k) & 1) as f32 * 2.0 - 1.0;
                *a += sign * v;
            }
        }
        let scale = 1.0 / (raw.len().max(1) as f32).sqrt();
        acc.iter().map(|a| a * scale).collect()
    }
}

/// Wraps an encoder and counts `encode` calls.
pub struct Counted {
    inner: Arc<dyn PatchEncoder>,
    calls: AtomicU64,
}

impl Counted {
    pub fn new(inner: Arc<dyn PatchEncoder>) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl PatchEncoder for Counted {
    fn spec(&self) -> EncoderSpec {
        self.inner.spec()
    }

    fn encode(&self, patch: &RgbImage) -> Vec<f32> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.encode(patch)
    }
}

/// Named encoders available to a run. Built-ins are registered by default;
/// user encoders are added with [`EncoderRegistry::register`].
#[derive(Clone)]
pub struct EncoderRegistry {
    encoders: BTreeMap<String, Arc<dyn PatchEncoder>>,
}

impl Default for EncoderRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(MeanRgb));
        r.register(Arc::new(RandProj64::default()));
        r
    }
}

impl std::fmt::Debug for EncoderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.encoders.keys()).finish()
    }
}

impl EncoderRegistry {
    pub fn empty() -> Self {
        Self { encoders: BTreeMap::new() }
    }

    pub fn register(&mut self, enc: Arc<dyn PatchEncoder>) {
        let spec = enc.spec();
        assert!(spec.output_dim > 0, "encoder {} has zero output dim", spec.name);
        self.encoders.insert(spec.name, enc);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn PatchEncoder>> {
        self.encoders.get(name).cloned().ok_or_else(|| Error::UnknownEncoder(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.encoders.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn mean_rgb_constant() {
        let f = MeanRgb.encode(&RgbImage::from_pixel(8, 8, Rgb([10, 20, 30])));
        let want = [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0];
        for (a, b) in f.iter().zip(want) {
            assert!((f64::from(*a) - b).abs() < 1e-7);
        }
        assert!((f[0] - 0.0392).abs() < 1e-4 && (f[1] - 0.0784).abs() < 1e-4 && (f[2] - 0.1176).abs() < 1e-4);
    }

    #[test]
    fn rand_proj_is_deterministic_and_seeded() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8 * 9, y as u8 * 13, 77]));
        let a = RandProj64::default().encode(&img);
        assert_eq!(a.len(), 64);
        assert_eq!(a, RandProj64::default().encode(&img));
        assert_ne!(a, RandProj64 { seed: 1 }.encode(&img));
        // linear in the input
        let zero = RandProj64::default().encode(&RgbImage::new(16, 16));
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn registry_lookup() {
        let r = EncoderRegistry::default();
        assert_eq!(r.get("mean_rgb").unwrap().spec().output_dim, 3);
        assert_eq!(r.get("rand_proj_64").unwrap().spec().output_dim, 64);
        assert!(matches!(r.get("uni_v1"), Err(Error::UnknownEncoder(_))));
        let c = Counted::new(r.get("mean_rgb").unwrap());
        c.encode(&RgbImage::new(2, 2));
        assert_eq!(c.calls(), 1);
    }
}
