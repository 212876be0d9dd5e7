use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Interleaved 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelGrid {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl PixelGrid {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let grid = Self { width, height, pixels };
        grid.validate()?;
        Ok(grid)
    }

    pub fn uniform(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self { width, height, pixels }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb8();
        Ok(Self {
            width: rgb.width(),
            height: rgb.height(),
            pixels: rgb.into_raw(),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Image("empty pixel grid".into()));
        }
        let expected = self.width as usize * self.height as usize * 3;
        if self.pixels.len() != expected {
            return Err(Error::Image(format!(
                "{}x{} RGB grid needs {expected} bytes, got {}",
                self.width,
                self.height,
                self.pixels.len()
            )));
        }
        Ok(())
    }
}

/// Per-channel normalisation applied after scaling bytes to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub means: [f32; 3],
    pub stds: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            means: IMAGENET_MEAN,
            stds: IMAGENET_STD,
        }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if self.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!(
                "normalization stds must be positive, got {:?}",
                self.stds
            )));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!(
                "normalization means must be finite, got {:?}",
                self.means
            )));
        }
        Ok(())
    }
}

/// Channel-major (C, H, W) float image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Resizes to `target_size`² with a triangle (bilinear) filter and normalises
/// each channel as `(value / 255 - mean) / std`.
pub fn prepare_image(grid: &PixelGrid, target_size: u32, norm: &Normalization) -> Result<ImageTensor> {
    norm.validate()?;
    grid.validate()?;
    if target_size == 0 {
        return Err(Error::Config("image target size must be positive".into()));
    }
    let side = target_size as usize;
    let resized;
    let pixels: &[u8] = if grid.width == target_size && grid.height == target_size {
        &grid.pixels
    } else {
        let src = RgbImage::from_raw(grid.width, grid.height, grid.pixels.clone())
            .ok_or_else(|| Error::Image("pixel buffer does not match dimensions".into()))?;
        resized = imageops::resize(&src, target_size, target_size, FilterType::Triangle).into_raw();
        &resized
    };

    let plane = side * side;
    let mut data = vec![0.0f32; 3 * plane];
    for (p, rgb) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = (f32::from(rgb[c]) / 255.0 - norm.means[c]) / norm.stds[c];
        }
    }
    Ok(ImageTensor {
        channels: 3,
        height: side,
        width: side,
        data,
    })
}
