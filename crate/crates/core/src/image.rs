//! Image, grayscale and mask value types plus PNG I/O and sRGB transfer helpers.
//!
//! [`ImageTensor`] stores interleaved RGB samples (row-major, `[y][x][c]`) as `f64`.
//! Values loaded from disk are in `[0, 1]`; intermediate arithmetic may leave the
//! unit range and is only clipped on save or where an operation says so.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest edge accepted at pipeline entry.
pub const MIN_PIPELINE_EDGE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(
                format!("{height}x{width}x3 = {} samples", height * width * 3),
                format!("{} samples", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample {v}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of one channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clipped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn same_dims(&self, other: &ImageTensor) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_dims(&self, other: &ImageTensor) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ))
        }
    }

    /// Checks the pipeline entry contract: at least 16x16 and values in `[0, 1]`.
    pub fn validate_for_pipeline(&self) -> Result<()> {
        if self.height < MIN_PIPELINE_EDGE || self.width < MIN_PIPELINE_EDGE {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} is smaller than the {MIN_PIPELINE_EDGE}x{MIN_PIPELINE_EDGE} minimum",
                self.height, self.width
            )));
        }
        if !self.is_unit_range() {
            return Err(Error::InvalidArgument("image values outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Sub-image with top-left corner `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}@({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Writes `tile` into `self` at `(y0, x0)`.
    pub fn paste(&mut self, tile: &ImageTensor, y0: usize, x0: usize) -> Result<()> {
        if y0 + tile.height > self.height || x0 + tile.width > self.width {
            return Err(Error::InvalidArgument("paste exceeds destination".into()));
        }
        for y in 0..tile.height {
            let dst = ((y0 + y) * self.width + x0) * 3;
            let src = y * tile.width * 3;
            self.data[dst..dst + tile.width * 3].copy_from_slice(&tile.data[src..src + tile.width * 3]);
        }
        Ok(())
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let raw = self.data.iter().map(|&v| quantize_u8(v)).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches dims")
    }
}

/// Maps `[0, 1]` to `0..=255`, clipping first and rounding half away from zero
/// (so 0.5 is stored as 128).
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8- or 16-bit RGB raster; sample `v` becomes `v / (2^bits - 1)`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let err = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    if !path.exists() {
        return Err(err("file not found".into()));
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| err(e.to_string()))?
        .decode()
        .map_err(|e| err(e.to_string()))?;
    let channels = img.color().channel_count();
    if channels != 3 {
        return Err(err(format!("expected 3 channels, found {channels}")));
    }
    let (width, height) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageRgb8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageRgb16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => {
            if other.color().bytes_per_pixel() / 3 > 1 {
                other.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
            } else {
                other.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
            }
        }
    };
    ImageTensor::new(height, width, data).map_err(|e| err(e.to_string()))
}

/// Writes an 8-bit RGB PNG (values clipped, see [`quantize_u8`]).
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_rgb8().save(path).map_err(|e| Error::Save {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrayscaleRule {
    /// Unweighted `(R + G + B) / 3`.
    #[default]
    Mean,
    /// Rec. 601 luma weights.
    Luma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

pub fn to_grayscale(img: &ImageTensor) -> GrayImage {
    to_grayscale_with(img, GrayscaleRule::Mean)
}

pub fn to_grayscale_with(img: &ImageTensor, rule: GrayscaleRule) -> GrayImage {
    let w = match rule {
        GrayscaleRule::Mean => [1.0 / 3.0; 3],
        GrayscaleRule::Luma => [0.299, 0.587, 0.114],
    };
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| match rule {
            GrayscaleRule::Mean => (p[0] + p[1] + p[2]) / 3.0,
            GrayscaleRule::Luma => w[0] * p[0] + w[1] * p[1] + w[2] * p[2],
        })
        .collect();
    GrayImage {
        height: img.height(),
        width: img.width(),
        data,
    }
}

/// sRGB decoding (electro-optical transfer) of a single sample.
#[inline]
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn linearize(img: &ImageTensor) -> ImageTensor {
    img.map(srgb_to_linear)
}

pub fn delinearize(img: &ImageTensor) -> ImageTensor {
    img.map(linear_to_srgb)
}

/// Per-pixel boolean mask, `true` marks an anomalous pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub(crate) fn ensure_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ))
        }
    }

    /// Encodes as 8-bit grayscale: 0 = normal, 255 = anomaly.
    pub fn to_luma8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        let raw = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches dims")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_luma8().save(path).map_err(|e| Error::Save {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Reads a mask PNG; any nonzero sample is treated as anomalous.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        let data = luma.into_raw().into_iter().map(|v| v > 0).collect();
        Self::new(h as usize, w as usize, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_of_pixel_is_channel_mean() {
        let img = ImageTensor::filled(2, 2, [0.3, 0.6, 0.9]);
        let g = to_grayscale(&img);
        assert!(g.data().iter().all(|&v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn grayscale_is_identity_on_gray_pixels() {
        let img = ImageTensor::from_fn(4, 5, |y, x, _| (y * 5 + x) as f64 / 20.0);
        let g = to_grayscale(&img);
        for y in 0..4 {
            for x in 0..5 {
                assert!((g.get(y, x) - img.get(y, x, 0)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn srgb_endpoints_and_midpoint() {
        assert_eq!(srgb_to_linear(0.0), 0.0);
        assert!((srgb_to_linear(1.0) - 1.0).abs() < 1e-15);
        assert!((linear_to_srgb(1.0) - 1.0).abs() < 1e-15);
        // ((0.5 + 0.055) / 1.055)^2.4
        assert!((srgb_to_linear(0.5) - 0.214_041).abs() < 1e-3);
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(-0.2), 0);
        assert_eq!(quantize_u8(1.7), 255);
    }

    #[test]
    fn crop_and_paste_are_inverse() {
        let img = ImageTensor::from_fn(6, 8, |y, x, c| ((y * 8 + x) * 3 + c) as f64 / 144.0);
        let tile = img.crop(2, 3, 3, 4).unwrap();
        assert_eq!(tile.get(0, 0, 1), img.get(2, 3, 1));
        let mut blank = ImageTensor::zeros(6, 8);
        blank.paste(&tile, 2, 3).unwrap();
        assert_eq!(blank.get(4, 6, 2), img.get(4, 6, 2));
        assert!(img.crop(5, 0, 2, 1).is_err());
    }

    #[test]
    fn pipeline_validation_rejects_tiny_images() {
        assert!(ImageTensor::zeros(8, 32).validate_for_pipeline().is_err());
        assert!(ImageTensor::zeros(16, 16).validate_for_pipeline().is_ok());
        assert!(ImageTensor::filled(16, 16, [1.2, 0.0, 0.0]).validate_for_pipeline().is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(ImageTensor::new(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(ImageTensor::new(1, 2, vec![0.0; 3]).is_err());
    }
}
