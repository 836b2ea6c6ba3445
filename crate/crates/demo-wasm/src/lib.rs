//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each view regenerates one synthetic image from `(seed, index, kind)` and
//! renders an RGBA frame for a canvas.

use wasm_bindgen::prelude::*;

use mtriage_core::imgproc::{
    canny, erode, extract_pectoral_muscle, hough_lines, line_distance, preprocess, resize_bilinear, shrink_region,
    threshold_binary, BinaryImage, CannyParams, GrayImage, HoughLine, MuscleParams, View, ANALYSIS_SIZE,
};
use mtriage_core::synth::{generate_image, SynthImage, SynthSpec};
use mtriage_core::taxonomy::OutlierType;

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Frame {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    score: f64,
    caption: String,
}

#[wasm_bindgen]
impl Frame {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Detector output: surviving pixels or line count.
    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn caption(&self) -> String {
        self.caption.clone()
    }
}

impl Frame {
    fn gray(img: &GrayImage) -> Self {
        let rgba = img.pixels().iter().flat_map(|&v| [v, v, v, 255]).collect();
        Self { width: img.width(), height: img.height(), rgba, score: 0.0, caption: String::new() }
    }

    fn tint(&mut self, at: usize, rgb: [u8; 3], alpha: f64) {
        let px = &mut self.rgba[at * 4..at * 4 + 3];
        for (c, t) in px.iter_mut().zip(rgb) {
            *c = (f64::from(*c) * (1.0 - alpha) + f64::from(t) * alpha).round() as u8;
        }
    }

    fn overlay(&mut self, mask: &BinaryImage, rgb: [u8; 3], alpha: f64) {
        for (i, _) in mask.bits().iter().enumerate().filter(|(_, &b)| b) {
            self.tint(i, rgb, alpha);
        }
    }

    fn draw_line(&mut self, line: &HoughLine, rgb: [u8; 3]) {
        for y in 0..self.height {
            for x in 0..self.width {
                if line_distance(line, self.height, self.width, y, x) < 0.6 {
                    self.tint(y * self.width + x, rgb, 1.0);
                }
            }
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.rgba
    }
}

/// Names accepted as `kind`, comma separated; `inlier` gives a clean image.
#[wasm_bindgen]
pub fn outlier_types() -> String {
    std::iter::once("inlier").chain(OutlierType::ALL.iter().map(|t| t.as_str())).collect::<Vec<_>>().join(",")
}

fn generate(seed: u32, index: u32, kind: &str) -> Result<SynthImage, String> {
    let kind = match kind {
        "inlier" | "" => None,
        other => Some(other.parse::<OutlierType>().map_err(|e| e.to_string())?),
    };
    let spec = SynthSpec { seed: u64::from(seed), ..SynthSpec::default() };
    Ok(generate_image(&spec, index as usize, kind))
}

fn describe(img: &SynthImage) -> String {
    let kind = img.outlier_type.map_or("inlier", OutlierType::as_str);
    format!("{:?} {:?}, {kind}", img.meta.laterality, img.meta.view)
}

fn preprocessed(img: &SynthImage) -> Result<GrayImage, String> {
    preprocess(&img.image, &img.meta).map_err(|e| e.to_string())
}

pub fn render_synth(seed: u32, index: u32, kind: &str) -> Result<Frame, String> {
    let img = generate(seed, index, kind)?;
    let mut frame = Frame::gray(&img.image);
    frame.caption = describe(&img);
    Ok(frame)
}

/// Preprocessed image with bright pixels in amber and erosion survivors in red.
pub fn render_erosion(seed: u32, index: u32, kind: &str, threshold: u8, kernel: usize, iterations: usize) -> Result<Frame, String> {
    if kernel == 0 {
        return Err("kernel must be at least 1".into());
    }
    let img = generate(seed, index, kind)?;
    let pre = preprocessed(&img)?;
    let bright = threshold_binary(&pre, threshold);
    let survivors = erode(&bright, kernel, iterations);
    let mut frame = Frame::gray(&pre);
    frame.overlay(&bright, [255, 190, 0], 0.45);
    frame.overlay(&survivors, [230, 20, 20], 0.9);
    frame.score = survivors.count_ones() as f64;
    frame.caption = format!("{}: {} of {} bright pixels survive", describe(&img), survivors.count_ones(), bright.count_ones());
    Ok(frame)
}

/// 256×256 analysis frame: muscle region in blue, its border in green and the
/// lines counted inside it in red.
pub fn render_muscle(seed: u32, index: u32, kind: &str, canny_low: f64, canny_high: f64, hough_threshold: u32) -> Result<Frame, String> {
    let img = generate(seed, index, kind)?;
    let frame_img = resize_bilinear(&preprocessed(&img)?, ANALYSIS_SIZE, ANALYSIS_SIZE);
    let mut frame = Frame::gray(&frame_img);
    if img.meta.view != View::MLO {
        frame.caption = format!("{}: no muscle in this view", describe(&img));
        return Ok(frame);
    }
    let params = MuscleParams { canny_low, canny_high, hough_threshold, ..MuscleParams::default() };
    let Some(region) = extract_pectoral_muscle(&frame_img, &params).map_err(|e| e.to_string())? else {
        frame.caption = format!("{}: no muscle border found", describe(&img));
        return Ok(frame);
    };
    let edges = canny(&frame_img, &CannyParams::absolute(canny_low, canny_high)).map_err(|e| e.to_string())?;
    let inner = edges.and(&shrink_region(&region.mask, params.margin));
    let lines = hough_lines(&inner, hough_threshold);
    frame.overlay(&region.mask, [40, 110, 255], 0.3);
    frame.overlay(&inner, [255, 255, 255], 0.8);
    for line in &lines {
        frame.draw_line(line, [230, 20, 20]);
    }
    frame.draw_line(&region.boundary, [30, 200, 60]);
    let n = lines.len();
    frame.score = n as f64;
    let verdict = if n as u32 > params.max_lines { " (excluded)" } else { "" };
    frame.caption = format!("{}: {n} lines in the muscle{verdict}", describe(&img));
    Ok(frame)
}

#[wasm_bindgen]
pub fn synth_image(seed: u32, index: u32, kind: &str) -> Result<Frame, JsError> {
    render_synth(seed, index, kind).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn erosion_view(seed: u32, index: u32, kind: &str, threshold: u8, kernel: usize, iterations: usize) -> Result<Frame, JsError> {
    render_erosion(seed, index, kind, threshold, kernel, iterations).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn muscle_view(seed: u32, index: u32, kind: &str, canny_low: f64, canny_high: f64, hough_threshold: u32) -> Result<Frame, JsError> {
    render_muscle(seed, index, kind, canny_low, canny_high, hough_threshold).map_err(|e| JsError::new(&e))
}
