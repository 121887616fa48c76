//! In-memory raster and vector types.
//!
//! All rasters are row-major with `(x, y)` addressing, `x` along the width.
//! Constructors enforce the invariants; the types are immutable afterwards.

use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_INDEX: u8 = 255;

fn check_len(what: &str, width: usize, height: usize, per_pixel: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!("{what}: empty raster {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(per_pixel))
        .ok_or_else(|| Error::Shape(format!("{what}: raster too large")))?;
    if expected != len {
        return Err(Error::Shape(format!(
            "{what}: {width}x{height}x{per_pixel} needs {expected} samples, got {len}"
        )));
    }
    Ok(())
}

/// 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("image: unsupported channel count {channels}")));
        }
        check_len("image", width, height, channels, data.len())?;
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

/// Inverse-depth raster at relative scale. Larger values are closer.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len("disparity", width, height, 1, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Domain(format!(
                "disparity at pixel {i} is {v}; values must be finite and non-negative"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

/// Per-pixel class indices with one reserved ignore value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    width: usize,
    height: usize,
    num_classes: usize,
    ignore_index: u8,
    data: Vec<u8>,
}

impl SegMap {
    pub fn new(
        width: usize,
        height: usize,
        num_classes: usize,
        ignore_index: u8,
        data: Vec<u8>,
    ) -> Result<Self> {
        check_len("label", width, height, 1, data.len())?;
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::Domain(format!(
                "label: num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        if (ignore_index as usize) < num_classes {
            return Err(Error::Domain(format!(
                "label: ignore index {ignore_index} collides with a class (num_classes = {num_classes})"
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| v != ignore_index && v as usize >= num_classes)
        {
            return Err(Error::Domain(format!(
                "label at pixel {i} is {v}, not below num_classes {num_classes} and not the ignore index"
            )));
        }
        Ok(Self {
            width,
            height,
            num_classes,
            ignore_index,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_index(&self) -> u8 {
        self.ignore_index
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Pixel count per class; ignored pixels are not counted.
    pub fn class_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.num_classes];
        for &v in &self.data {
            if v != self.ignore_index {
                hist[v as usize] += 1;
            }
        }
        hist
    }
}

/// Confidence of the most likely class per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len("probability", width, height, 1, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!(
                "probability at pixel {i} is {v}, outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Confidence map of a ground-truth labeled sample.
    pub fn ones(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![1.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbedding {
    pub image_id: String,
    pub vector: Vec<f64>,
}

impl FeatureEmbedding {
    pub fn new(image_id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let image_id = image_id.into();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(image_id, "feature vector has non-finite values"));
        }
        Ok(Self { image_id, vector })
    }
}

/// Flat model weights, as consumed by the teacher EMA.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("parameter vector has non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
