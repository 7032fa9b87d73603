//! Float image containers.
//!
//! All pipeline math runs in `f64`; images are stored row-major from the top-left
//! pixel, RGB interleaved for color. The on-disk PFM format is 32-bit float, so
//! values are rounded to `f32` only at I/O boundaries.

use crate::error::{Error, Result};

/// RGB image with `f64` samples, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRgb {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::zeros(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::argument(format!(
                "rgb buffer length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(ImageRgb {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn same_shape(&self, other: &ImageRgb) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Elementwise `max(self - other, 0)`.
    pub fn saturating_sub(&self, other: &ImageRgb) -> Result<ImageRgb> {
        if !self.same_shape(other) {
            return Err(Error::argument("image shape mismatch in subtraction"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).max(0.0))
            .collect();
        Ok(ImageRgb {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageRgb {
        ImageRgb {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageRgb, f: impl Fn(f64, f64) -> f64) -> Result<ImageRgb> {
        if !self.same_shape(other) {
            return Err(Error::argument("image shape mismatch"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ImageRgb {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Single-channel image with `f64` samples, row-major.
///
/// Doubles as a binary mask: a pixel is "on" when its value exceeds 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGray {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageGray {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, v: f64) -> Self {
        ImageGray {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::argument(format!(
                "gray buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(ImageGray {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Binary-mask accessor.
    #[inline]
    pub fn is_on(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.5
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn same_shape(&self, other: &ImageGray) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Binary validity mask; alias used where intent matters more than storage.
pub type Mask = ImageGray;
