use serde::{Deserialize, Serialize};

use super::hough::normal_offset;
use super::morphology::erode;
use super::preprocess::FOREGROUND_THRESHOLD;
use super::{canny, hough_lines, resize_bilinear, BinaryImage, CannyParams, GrayImage, HoughLine, ImageError, ImageMeta, Result, View};

/// Side of the square frame the muscle analysis runs in.
pub const ANALYSIS_SIZE: usize = 256;

/// Pectoral-muscle settings. Defaults are the best configuration of the
/// 24-point search; the boundary fields drive border detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleParams {
    pub lower_distance: f64,
    pub upper_distance: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub hough_threshold: u32,
    pub boundary_sigma: f64,
    pub boundary_low: f64,
    pub boundary_high: f64,
    pub boundary_hough_threshold: u32,
    /// Pixels trimmed from the region edge before counting lines.
    pub margin: usize,
    /// Counts above this are excluded from ranking.
    pub max_lines: u32,
}

impl Default for MuscleParams {
    fn default() -> Self {
        Self {
            lower_distance: 5.0,
            upper_distance: 182.0,
            canny_low: 170.0,
            canny_high: 220.0,
            hough_threshold: 50,
            boundary_sigma: 5.0,
            boundary_low: 0.1,
            boundary_high: 0.2,
            boundary_hough_threshold: 60,
            margin: 4,
            max_lines: 8,
        }
    }
}

impl MuscleParams {
    pub const LOWER_DISTANCES: [f64; 2] = [5.0, 20.0];
    pub const CANNY_LOWS: [f64; 2] = [160.0, 170.0];
    pub const CANNY_HIGHS: [f64; 2] = [180.0, 220.0];
    pub const HOUGH_THRESHOLDS: [u32; 3] = [40, 50, 60];
    pub const BOUNDARY_ANGLES: (f64, f64) = (10.0, 70.0);

    /// Lower-distance-major order; other fields keep their current values.
    pub fn search_grid(&self) -> Vec<Self> {
        let mut out = Vec::new();
        for lower_distance in Self::LOWER_DISTANCES {
            for canny_low in Self::CANNY_LOWS {
                for canny_high in Self::CANNY_HIGHS {
                    for hough_threshold in Self::HOUGH_THRESHOLDS {
                        out.push(Self { lower_distance, canny_low, canny_high, hough_threshold, ..*self });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuscleRegion {
    pub mask: BinaryImage,
    pub boundary: HoughLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineCount {
    Count(u32),
    /// More lines than `max_lines`; the region likely includes breast tissue.
    Excluded(u32),
}

impl LineCount {
    pub fn lines(self) -> u32 {
        match self {
            Self::Count(n) | Self::Excluded(n) => n,
        }
    }

    pub fn is_excluded(self) -> bool {
        matches!(self, Self::Excluded(_))
    }

    /// Ranking key; excluded images never rank.
    pub fn rank_value(self) -> Option<u32> {
        match self {
            Self::Count(n) => Some(n),
            Self::Excluded(_) => None,
        }
    }
}

fn check_size(img: &GrayImage) -> Result<()> {
    if img.height() != ANALYSIS_SIZE || img.width() != ANALYSIS_SIZE {
        return Err(ImageError::AnalysisSize { expected: ANALYSIS_SIZE, height: img.height(), width: img.width() });
    }
    Ok(())
}

fn boundary_lines(img: &GrayImage, params: &MuscleParams) -> Result<Vec<HoughLine>> {
    let edges = canny(img, &CannyParams::relative(params.boundary_low, params.boundary_high, params.boundary_sigma))?;
    Ok(hough_lines(&edges, params.boundary_hough_threshold))
}

/// Candidate on the upper-left side of the centre with the smallest |ρ|.
fn select_boundary(lines: &[HoughLine], params: &MuscleParams) -> Option<HoughLine> {
    let (lo_angle, hi_angle) = MuscleParams::BOUNDARY_ANGLES;
    lines
        .iter()
        .filter(|l| {
            l.distance < 0.0
                && l.angle > lo_angle
                && l.angle < hi_angle
                && -l.distance > params.lower_distance
                && -l.distance <= params.upper_distance
        })
        .min_by(|a, b| b.distance.total_cmp(&a.distance).then(b.votes.cmp(&a.votes)))
        .copied()
}

fn region_mask(img: &GrayImage, boundary: &HoughLine) -> BinaryImage {
    let n = ANALYSIS_SIZE;
    BinaryImage::from_fn(n, n, |y, x| {
        img.get(y, x) > FOREGROUND_THRESHOLD && normal_offset(boundary.angle, n, n, y, x) < boundary.distance
    })
}

/// Finds the muscle border in a 256×256 left-oriented frame and returns the
/// foreground on the upper-left side of it. `None` when no line qualifies.
pub fn extract_pectoral_muscle(img: &GrayImage, params: &MuscleParams) -> Result<Option<MuscleRegion>> {
    check_size(img)?;
    Ok(select_boundary(&boundary_lines(img, params)?, params)
        .map(|boundary| MuscleRegion { mask: region_mask(img, &boundary), boundary }))
}

/// Region with `margin` pixels peeled off its edge.
pub fn shrink_region(mask: &BinaryImage, margin: usize) -> BinaryImage {
    if margin == 0 {
        return mask.clone();
    }
    erode(mask, 2 * margin + 1, 1)
}

/// Number of Hough lines among the absolute-threshold Canny edges inside the
/// (shrunken) region.
pub fn muscle_line_count(img: &GrayImage, region: &BinaryImage, params: &MuscleParams) -> Result<LineCount> {
    let edges = canny(img, &CannyParams::absolute(params.canny_low, params.canny_high))?;
    Ok(count_lines(&edges, region, params))
}

fn count_lines(edges: &BinaryImage, region: &BinaryImage, params: &MuscleParams) -> LineCount {
    let inner = edges.and(&shrink_region(region, params.margin));
    let n = hough_lines(&inner, params.hough_threshold).len() as u32;
    if n > params.max_lines {
        LineCount::Excluded(n)
    } else {
        LineCount::Count(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MuscleOutcome {
    /// Non-MLO views carry no visible muscle.
    Skipped,
    NoBoundary,
    Lines { count: LineCount, boundary: HoughLine },
}

impl MuscleOutcome {
    pub fn line_count(&self) -> u32 {
        match self {
            Self::Lines { count, .. } => count.lines(),
            _ => 0,
        }
    }

    pub fn excluded(&self) -> bool {
        matches!(self, Self::Lines { count: LineCount::Excluded(_), .. })
    }

    /// Descending-rank key; `None` for excluded images.
    pub fn rank_value(&self) -> Option<u32> {
        match self {
            Self::Lines { count, .. } => count.rank_value(),
            _ => Some(0),
        }
    }
}

/// Full analysis of a preprocessed image: resize to 256×256, find the border,
/// count lines.
pub fn muscle_score(preprocessed: &GrayImage, meta: &ImageMeta, params: &MuscleParams) -> Result<MuscleOutcome> {
    if meta.view != View::MLO {
        return Ok(MuscleOutcome::Skipped);
    }
    let frame = resize_bilinear(preprocessed, ANALYSIS_SIZE, ANALYSIS_SIZE);
    let Some(region) = extract_pectoral_muscle(&frame, params)? else {
        return Ok(MuscleOutcome::NoBoundary);
    };
    let count = muscle_line_count(&frame, &region.mask, params)?;
    Ok(MuscleOutcome::Lines { count, boundary: region.boundary })
}

/// [`muscle_score`] for every configuration of `grid`, sharing the border
/// search and edge maps between configurations that agree on them.
pub fn muscle_scores_for_grid(
    preprocessed: &GrayImage,
    meta: &ImageMeta,
    grid: &[MuscleParams],
) -> Result<Vec<MuscleOutcome>> {
    if meta.view != View::MLO {
        return Ok(vec![MuscleOutcome::Skipped; grid.len()]);
    }
    let frame = resize_bilinear(preprocessed, ANALYSIS_SIZE, ANALYSIS_SIZE);
    let mut borders: Vec<([u64; 4], Vec<HoughLine>)> = Vec::new();
    let mut edge_maps: Vec<([u64; 2], BinaryImage)> = Vec::new();
    let mut out = Vec::with_capacity(grid.len());
    for p in grid {
        let bkey = [p.boundary_sigma.to_bits(), p.boundary_low.to_bits(), p.boundary_high.to_bits(), p.boundary_hough_threshold as u64];
        let lines = match borders.iter().position(|(k, _)| *k == bkey) {
            Some(i) => &borders[i].1,
            None => {
                borders.push((bkey, boundary_lines(&frame, p)?));
                &borders.last().expect("pushed").1
            }
        };
        let Some(boundary) = select_boundary(lines, p) else {
            out.push(MuscleOutcome::NoBoundary);
            continue;
        };
        let ekey = [p.canny_low.to_bits(), p.canny_high.to_bits()];
        let edges = match edge_maps.iter().position(|(k, _)| *k == ekey) {
            Some(i) => &edge_maps[i].1,
            None => {
                edge_maps.push((ekey, canny(&frame, &CannyParams::absolute(p.canny_low, p.canny_high))?));
                &edge_maps.last().expect("pushed").1
            }
        };
        let count = count_lines(edges, &region_mask(&frame, &boundary), p);
        out.push(MuscleOutcome::Lines { count, boundary });
    }
    Ok(out)
}
