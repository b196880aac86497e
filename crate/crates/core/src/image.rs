//! Dense images, per-pixel part labels and binary masks.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invalid;

/// Value range convention of an [`ImageGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Values in `[0, 1]`.
    #[default]
    UnitRange,
    /// Values in `[-1, 1]`.
    Signed,
}

/// Row-major `H x W x C` image of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    normalization: Normalization,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid!("image dimensions must be positive, got {height}x{width}x{channels}"));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(alloc::format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("image contains non-finite values"));
        }
        Ok(Self { height, width, channels, data, normalization: Normalization::UnitRange })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Copy in `[0, 1]` regardless of the stored convention; signed values are clamped to `[-1, 1]` first.
    pub fn to_unit_range(&self) -> ImageGrid {
        match self.normalization {
            Normalization::UnitRange => self.clone(),
            Normalization::Signed => ImageGrid {
                height: self.height,
                width: self.width,
                channels: self.channels,
                data: self.data.iter().map(|v| (v.clamp(-1.0, 1.0) + 1.0) * 0.5).collect(),
                normalization: Normalization::UnitRange,
            },
        }
    }
}

/// Top-most part per pixel: `0` is background, `i + 1` is part `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(alloc::format!("label map needs {} entries", height * width)));
        }
        Ok(Self { height, width, labels })
    }

    pub fn part_at(&self, row: usize, col: usize) -> Option<usize> {
        match self.labels[row * self.width + col] {
            0 => None,
            l => Some(usize::from(l) - 1),
        }
    }

    pub fn mask_of(&self, part: usize) -> BinaryMask {
        let want = (part + 1) as u16;
        BinaryMask { height: self.height, width: self.width, data: self.labels.iter().map(|&l| l == want).collect() }
    }

    /// Union of the visible pixels of `parts`.
    pub fn mask_of_any(&self, parts: &[usize]) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.labels.iter().map(|&l| l != 0 && parts.contains(&(usize::from(l) - 1))).collect(),
        }
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask { height: self.height, width: self.width, data: self.labels.iter().map(|&l| l != 0).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(alloc::format!("mask needs {} entries", height * width)));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect() }
    }

    pub fn intersection(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect() }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}
