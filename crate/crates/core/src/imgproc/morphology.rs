use serde::{Deserialize, Serialize};

use super::{BinaryImage, GrayImage};

/// Erosion detector settings. Defaults are the best configuration of the
/// 16-point search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErosionParams {
    pub threshold: u8,
    pub kernel_size: usize,
    pub iterations: usize,
}

impl Default for ErosionParams {
    fn default() -> Self {
        Self { threshold: 220, kernel_size: 5, iterations: 5 }
    }
}

impl ErosionParams {
    pub const THRESHOLDS: [u8; 4] = [180, 200, 220, 240];
    pub const KERNEL_SIZES: [usize; 2] = [5, 10];
    pub const ITERATIONS: [usize; 2] = [5, 10];

    /// Threshold-major order.
    pub fn search_grid() -> Vec<Self> {
        let mut out = Vec::new();
        for threshold in Self::THRESHOLDS {
            for kernel_size in Self::KERNEL_SIZES {
                for iterations in Self::ITERATIONS {
                    out.push(Self { threshold, kernel_size, iterations });
                }
            }
        }
        out
    }
}

/// Bit set iff intensity > `t`.
pub fn threshold_binary(img: &GrayImage, t: u8) -> BinaryImage {
    BinaryImage::new(img.height(), img.width(), img.pixels().iter().map(|&p| p > t).collect()).expect("same dims")
}

// Min over a window of `k` cells along one axis; out-of-range cells count as 0.
fn erode_1d(line: &[bool], k: usize, out: &mut [bool]) {
    let n = line.len() as i64;
    let lo = -(k as i64 / 2);
    let hi = k as i64 - 1 + lo;
    // run of consecutive ones ending at each index
    let mut run = vec![0i64; line.len()];
    let mut r = 0;
    for (i, &b) in line.iter().enumerate() {
        r = if b { r + 1 } else { 0 };
        run[i] = r;
    }
    for i in 0..n {
        let (a, b) = (i + lo, i + hi);
        out[i as usize] = a >= 0 && b < n && run[b as usize] >= k as i64;
    }
}

/// Iterated erosion by a `kernel_size`² square of ones.
pub fn erode(bin: &BinaryImage, kernel_size: usize, iterations: usize) -> BinaryImage {
    let (h, w) = (bin.height(), bin.width());
    let mut bits = bin.bits().to_vec();
    if kernel_size <= 1 {
        return bin.clone();
    }
    let mut row_out = vec![false; w];
    let mut col = vec![false; h];
    let mut col_out = vec![false; h];
    for _ in 0..iterations {
        if !bits.contains(&true) {
            break;
        }
        for y in 0..h {
            erode_1d(&bits[y * w..(y + 1) * w], kernel_size, &mut row_out);
            bits[y * w..(y + 1) * w].copy_from_slice(&row_out);
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = bits[y * w + x];
            }
            erode_1d(&col, kernel_size, &mut col_out);
            for y in 0..h {
                bits[y * w + x] = col_out[y];
            }
        }
    }
    BinaryImage::new(h, w, bits).expect("same dims")
}

/// Surviving bright-pixel count; larger means more outlying.
pub fn erosion_score(img: &GrayImage, params: &ErosionParams) -> u64 {
    erode(&threshold_binary(img, params.threshold), params.kernel_size, params.iterations).count_ones()
}

/// [`erosion_score`] for every configuration of `grid`; runs sharing a
/// threshold and kernel continue one erosion instead of restarting.
pub fn erosion_scores_for_grid(img: &GrayImage, grid: &[ErosionParams]) -> Vec<u64> {
    let mut out = vec![0; grid.len()];
    let mut done = vec![false; grid.len()];
    for i in 0..grid.len() {
        if done[i] {
            continue;
        }
        let (t, k) = (grid[i].threshold, grid[i].kernel_size);
        let mut group: Vec<usize> = (i..grid.len()).filter(|&j| grid[j].threshold == t && grid[j].kernel_size == k).collect();
        group.sort_by_key(|&j| grid[j].iterations);
        let mut current = threshold_binary(img, t);
        let mut applied = 0;
        for j in group {
            current = erode(&current, k, grid[j].iterations - applied);
            applied = grid[j].iterations;
            out[j] = current.count_ones();
            done[j] = true;
        }
    }
    out
}
