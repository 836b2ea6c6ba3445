use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{BinaryImage, GrayImage, ImageError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Thresholds are fractions of the image's maximum gradient magnitude.
    Relative,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
    pub mode: ThresholdMode,
    /// Gaussian pre-blur; `None` skips smoothing.
    pub sigma: Option<f64>,
}

impl CannyParams {
    pub fn relative(low: f64, high: f64, sigma: f64) -> Self {
        Self { low, high, mode: ThresholdMode::Relative, sigma: Some(sigma) }
    }

    pub fn absolute(low: f64, high: f64) -> Self {
        Self { low, high, mode: ThresholdMode::Absolute, sigma: None }
    }
}

#[inline]
fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Separable Gaussian with a 4σ radius and replicated borders.
pub fn gaussian_blur(data: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * data[y * width + clamp_index(x as i64 + j as i64 - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[clamp_index(y as i64 + j as i64 - radius, height) * width + x])
                .sum();
        }
    }
    out
}

/// 3×3 Sobel derivatives `(gx, gy)` with replicated borders; x grows right,
/// y grows down.
pub fn sobel(data: &[f64], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: i64, x: i64| data[clamp_index(y, height) * width + clamp_index(x, width)];
    let mut gx = vec![0.0; data.len()];
    let mut gy = vec![0.0; data.len()];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let i = y as usize * width + x as usize;
            gx[i] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

/// Edge map: optional blur, Sobel, non-maximum suppression, hysteresis.
pub fn canny(img: &GrayImage, params: &CannyParams) -> Result<BinaryImage> {
    if params.low >= params.high {
        return Err(ImageError::Thresholds { low: params.low, high: params.high });
    }
    let (h, w) = (img.height(), img.width());
    let raw: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    let data = match params.sigma {
        Some(s) => gaussian_blur(&raw, h, w, s),
        None => raw,
    };
    let (gx, gy) = sobel(&data, h, w);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();

    let mut thin = vec![0.0; h * w];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            // neighbour offsets along the gradient direction
            let (dy, dx): (i64, i64) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let prev = mag[((y as i64 - dy) as usize) * w + (x as i64 - dx) as usize];
            let next = mag[((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize];
            if m > prev && m >= next {
                thin[i] = m;
            }
        }
    }

    let (low, high) = match params.mode {
        ThresholdMode::Absolute => (params.low, params.high),
        ThresholdMode::Relative => {
            let max = mag.iter().cloned().fold(0.0, f64::max);
            (params.low * max, params.high * max)
        }
    };
    let mut edges = vec![false; h * w];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > high && m > 0.0 {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] > low && thin[j] > 0.0 {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    BinaryImage::new(h, w, edges)
}
