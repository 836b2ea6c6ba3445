//! Grayscale image plumbing, preprocessing, morphological erosion, Canny
//! edges, Hough lines and pectoral-muscle analysis.

mod canny;
mod hough;
mod morphology;
mod muscle;
mod preprocess;

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canny::{canny, gaussian_blur, sobel, CannyParams, ThresholdMode};
pub use hough::{hough_lines, line_distance, normal_offset, HoughLine};
pub use morphology::{erosion_scores_for_grid, erode, erosion_score, threshold_binary, ErosionParams};
pub use muscle::{muscle_scores_for_grid, 
    extract_pectoral_muscle, muscle_line_count, muscle_score, shrink_region, LineCount, MuscleOutcome, MuscleParams,
    MuscleRegion, ANALYSIS_SIZE,
};
pub use preprocess::{
    crop_pad, mirror_if_right, preprocess, resize_bilinear, segment_breast, FOREGROUND_THRESHOLD, PREPROCESSED_H,
    PREPROCESSED_W,
};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dims {height}x{width} do not match {found} pixels")]
    DataLength { height: usize, width: usize, found: usize },
    #[error("image has a zero dimension")]
    Empty,
    #[error("no foreground pixels above the segmentation threshold")]
    EmptyForeground,
    #[error("canny thresholds: low {low} must be below high {high}")]
    Thresholds { low: f64, high: f64 },
    #[error("expected a {expected}x{expected} analysis image, got {height}x{width}")]
    AnalysisSize { expected: usize, height: usize, width: usize },
    #[error("image decode/encode: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImageError::Empty);
        }
        if pixels.len() != height * width {
            return Err(ImageError::DataLength { height, width, found: pixels.len() });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("non-zero dims")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let pixels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, pixels).expect("non-zero dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length matches dims")
    }

    pub fn from_image(img: image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.into_raw()).expect("decoded image has non-zero dims")
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_image()
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ImageError::Codec(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| ImageError::Codec(e.to_string()))?;
        Ok(Self::from_image(img.into_luma8()))
    }

    /// Reads an 8-bit PNG or PGM file.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Writes PNG or PGM depending on the file extension.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if pgm {
            let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
            bytes.extend_from_slice(&self.pixels);
            std::fs::write(path, bytes)?;
        } else {
            std::fs::write(path, self.encode_png()?)?;
        }
        Ok(())
    }
}

/// Two-valued image with the dims of its source.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImageError::Empty);
        }
        if bits.len() != height * width {
            return Err(ImageError::DataLength { height, width, found: bits.len() });
        }
        Ok(Self { height, width, bits })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("non-zero dims")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, bits).expect("non-zero dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn and(&self, other: &Self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// `true` iff every set bit of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// 0/255 rendering.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(self.height, self.width, self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect())
            .expect("same dims")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Laterality {
    L,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    CC,
    MLO,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: u32,
    pub laterality: Laterality,
    pub view: View,
    pub manufacturer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}
