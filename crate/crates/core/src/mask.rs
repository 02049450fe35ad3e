use crate::error::{Error, Result};

/// Binary tissue raster at thumbnail resolution (1 = tissue).
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<u8>,
    /// Factor from mask pixels to level-0 pixels.
    pub thumb_downsample: f64,
}

impl TissueMask {
    pub fn zeros(width: u32, height: u32, thumb_downsample: f64) -> Self {
        Self { width, height, bits: vec![0; width as usize * height as usize], thumb_downsample }
    }

    pub fn ones(width: u32, height: u32, thumb_downsample: f64) -> Self {
        Self { width, height, bits: vec![1; width as usize * height as usize], thumb_downsample }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>, thumb_downsample: f64) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::DimMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParam("mask bits must be 0 or 1".into()));
        }
        Ok(Self { width, height, bits, thumb_downsample })
    }

    pub fn from_fn(width: u32, height: u32, thumb_downsample: f64, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(u8::from(f(x, y)));
            }
        }
        Self { width, height, bits, thumb_downsample }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = u8::from(v);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// 0/255 grayscale bytes for PNG output.
    pub fn to_gray(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect()
    }

    pub fn transpose(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, self.thumb_downsample, |x, y| self.get(y, x))
    }
}
