//! Seeded generator of mammogram-like frames with injected technical outliers.
//!
//! Images are drawn left-oriented (chest wall at x = 0) and mirrored at the
//! end for right breasts. Only the signatures the detectors key on are
//! modelled: bright devices, a homogeneous pectoral wedge in MLO views,
//! stripes inside it, border bands, exposure shifts and displacement.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::{GrayImage, ImageError, ImageMeta, Laterality, View, ANALYSIS_SIZE};
use crate::taxonomy::OutlierType;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("truth csv: {0}")]
    Csv(String),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

pub const MANUFACTURERS: [&str; 3] = ["vendor_a", "vendor_b", "vendor_c"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_images: usize,
    pub outlier_rate: f64,
    /// Weights per [`OutlierType::ALL`] entry; must sum to 1.
    pub mix: [f64; 8],
    pub height: usize,
    pub width: usize,
    pub p_right: f64,
    pub p_mlo: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_images: 2000,
            outlier_rate: 0.005,
            mix: reference_mix(),
            height: 600,
            width: 400,
            p_right: 0.5,
            p_mlo: 0.5,
            seed: 0,
        }
    }
}

/// Mix proportional to the observed outlier frequencies.
pub fn reference_mix() -> [f64; 8] {
    let total: u32 = OutlierType::ALL.iter().map(|t| t.reference_count()).sum();
    OutlierType::ALL.map(|t| t.reference_count() as f64 / total as f64)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.mix.iter().any(|&m| m < 0.0) {
            return Err(SynthError::Spec(format!("mix must be non-negative and sum to 1, got {sum}")));
        }
        if !(self.outlier_rate > 0.0 && self.outlier_rate <= 0.1) {
            return Err(SynthError::Spec(format!("outlier_rate {} outside (0, 0.1]", self.outlier_rate)));
        }
        if self.n_images == 0 || self.height < 64 || self.width < 48 {
            return Err(SynthError::Spec("need at least one image of at least 64x48".into()));
        }
        for (name, p) in [("p_right", self.p_right), ("p_mlo", self.p_mlo)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Spec(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn n_outliers(&self) -> usize {
        (self.n_images as f64 * self.outlier_rate).round() as usize
    }

    /// Largest-remainder split of the outlier count over the mix.
    pub fn outlier_counts(&self) -> [usize; 8] {
        allocate(self.n_outliers(), &self.mix)
    }

    /// Outlier type (if any) for every image index.
    pub fn assignments(&self) -> Vec<Option<OutlierType>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        let mut slots: Vec<usize> = (0..self.n_images).collect();
        let k = self.n_outliers().min(self.n_images);
        let (chosen, _) = slots.partial_shuffle(&mut rng, k);
        let mut out = vec![None; self.n_images];
        let mut pos = chosen.iter();
        for (t, n) in OutlierType::ALL.iter().zip(self.outlier_counts()) {
            for &i in pos.by_ref().take(n) {
                out[i] = Some(*t);
            }
        }
        out
    }

    /// Independent stream per image index.
    pub fn image_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

pub fn allocate(total: usize, weights: &[f64; 8]) -> [usize; 8] {
    let quotas = weights.map(|w| w * total as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Maps raw pixels into the square frame the muscle analysis runs in, given
/// the breast bounding box that preprocessing will crop to.
#[derive(Debug, Clone, Copy, PartialEq)]
struct AnalysisFrame {
    y0: f64,
    x0: f64,
    top: f64,
    left: f64,
    crop_h: f64,
    crop_w: f64,
}

impl AnalysisFrame {
    fn from_bbox(y0: usize, y1: usize, x0: usize, x1: usize) -> Self {
        let (h, w) = (y1 - y0 + 1, x1 - x0 + 1);
        let crop_w = w.max(h.div_ceil(2));
        let crop_h = 2 * crop_w;
        Self {
            y0: y0 as f64,
            x0: x0 as f64,
            top: ((crop_h - h) / 2) as f64,
            left: ((crop_w - w) / 2) as f64,
            crop_h: crop_h as f64,
            crop_w: crop_w as f64,
        }
    }

    fn map(&self, y: usize, x: usize) -> (f64, f64) {
        let n = ANALYSIS_SIZE as f64;
        (
            (y as f64 - self.y0 + self.top + 0.5) * n / self.crop_h - 0.5,
            (x as f64 - self.x0 + self.left + 0.5) * n / self.crop_w - 0.5,
        )
    }

    /// Signed offset along the normal at `angle`, from the frame centre.
    fn offset(&self, angle: f64, y: usize, x: usize) -> f64 {
        let c = (ANALYSIS_SIZE as f64 - 1.0) / 2.0;
        let (ya, xa) = self.map(y, x);
        let t = angle.to_radians();
        (xa - c) * t.cos() + (ya - c) * t.sin()
    }
}

/// Pectoral border `offset = −distance` in the analysis frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleGeometry {
    pub angle: f64,
    pub distance: f64,
    pub level: f64,
}

/// A left-oriented frame plus the geometry the injectors need.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: GrayImage,
    pub meta: ImageMeta,
    pub muscle: Option<MuscleGeometry>,
    cy: f64,
    ay: f64,
    ax: f64,
    frame: AnalysisFrame,
}

impl Scene {
    fn in_breast(&self, y: f64, x: f64) -> bool {
        x >= 0.0 && (x / self.ax).powi(2) + ((y - self.cy) / self.ay).powi(2) < 1.0
    }

    /// Whether a left-oriented pixel lies in the pectoral wedge.
    pub fn in_muscle(&self, y: usize, x: usize) -> bool {
        self.muscle.is_some_and(|m| {
            self.in_breast(y as f64, x as f64) && self.frame.offset(m.angle, y, x) < -m.distance
        })
    }

    /// Final image in the scene's own laterality.
    pub fn finish(&self) -> GrayImage {
        match self.meta.laterality {
            Laterality::L => self.image.clone(),
            Laterality::R => {
                let (h, w) = (self.image.height(), self.image.width());
                GrayImage::from_fn(h, w, |y, x| self.image.get(y, w - 1 - x))
            }
        }
    }
}

fn background(rng: &mut impl Rng) -> u8 {
    rng.random_range(0..=5)
}

struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
    amp: f64,
}

/// Clean frame with breast, optional muscle wedge and a text patch.
pub fn generate_inlier(spec: &SynthSpec, rng: &mut impl Rng, image_id: u32, laterality: Laterality, view: View) -> Scene {
    let (h, w) = (spec.height, spec.width);
    let (hf, wf) = (h as f64, w as f64);
    let ax = wf * rng.random_range(0.62..0.74);
    let (cy, ay) = match view {
        View::MLO => (hf * rng.random_range(0.30..0.38), hf * rng.random_range(0.56..0.60)),
        View::CC => (hf * rng.random_range(0.47..0.53), hf * rng.random_range(0.40..0.45)),
    };
    let tissue = rng.random_range(110.0..140.0);
    let waves: Vec<Wave> = (0..6)
        .map(|_| {
            let dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / rng.random_range(60.0..160.0);
            Wave { ky: k * dir.sin(), kx: k * dir.cos(), phase: rng.random_range(0.0..std::f64::consts::TAU), amp: rng.random_range(0.4..1.0) }
        })
        .collect();

    let inside = |y: usize, x: usize| (x as f64 / ax).powi(2) + ((y as f64 - cy) / ay).powi(2) < 1.0;
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    let mut pixels = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !inside(y, x) {
                pixels[i] = background(rng);
                continue;
            }
            (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
            let r2 = (x as f64 / ax).powi(2) + ((y as f64 - cy) / ay).powi(2);
            let texture: f64 = waves.iter().map(|t| t.amp * (t.ky * y as f64 + t.kx * x as f64 + t.phase).sin()).sum();
            let v = tissue * (1.0 - 0.35 * r2 * r2) + texture + rng.random_range(-2.0..2.0);
            pixels[i] = v.round().clamp(12.0, 255.0) as u8;
        }
    }
    let frame = AnalysisFrame::from_bbox(y0, y1, x0, x1);

    let muscle = (view == View::MLO).then(|| {
        let angle: f64 = rng.random_range(20.0..60.0);
        let t = angle.to_radians();
        let c = (ANALYSIS_SIZE as f64 - 1.0) / 2.0;
        // keep the border's frame intercepts inside the breast
        let floor = (c * t.sin() - 0.35 * c * t.cos()).max(c * t.cos() - 0.85 * c * t.sin());
        let distance = rng.random_range(35.0..65.0f64).max(floor + 5.0);
        MuscleGeometry { angle, distance, level: (tissue + rng.random_range(45.0..60.0)).min(200.0) }
    });
    if let Some(m) = muscle {
        for y in 0..h {
            for x in 0..w {
                if inside(y, x) && frame.offset(m.angle, y, x) < -m.distance {
                    pixels[y * w + x] = (m.level + rng.random_range(-2.0..2.0)).round() as u8;
                }
            }
        }
    }

    // annotation text: small glyph cells well clear of the breast
    let (ty, tx) = ((hf * 0.04) as usize, (wf * 0.80) as usize);
    let glow: u8 = rng.random_range(180..=255);
    for gy in 0..3 {
        for gx in 0..6 {
            if rng.random_bool(0.6) {
                for y in ty + gy * 10..ty + gy * 10 + 7 {
                    for x in tx + gx * 9..(tx + gx * 9 + 6).min(w) {
                        pixels[y * w + x] = glow;
                    }
                }
            }
        }
    }

    let manufacturer = MANUFACTURERS[rng.random_range(0..MANUFACTURERS.len())].to_string();
    Scene {
        image: GrayImage::new(h, w, pixels).expect("spec dims are non-zero"),
        meta: ImageMeta { image_id, laterality, view, manufacturer, source: None },
        muscle,
        cy,
        ay,
        ax,
        frame,
    }
}

/// A point well inside the breast, at least `margin` px from its edge.
fn interior_point(scene: &Scene, rng: &mut impl Rng, margin: f64) -> (f64, f64) {
    let (h, w) = (scene.image.height() as f64, scene.image.width() as f64);
    for _ in 0..1000 {
        let y = rng.random_range(margin..h - margin);
        let x = rng.random_range(margin..(scene.ax - margin).max(margin + 1.0).min(w - margin));
        let fits = [(-margin, 0.0), (margin, 0.0), (0.0, margin), (0.0, -margin)]
            .iter()
            .all(|(dy, dx)| scene.in_breast(y + dy, x + dx));
        let clear_of_muscle = scene.muscle.is_none_or(|m| {
            scene.frame.offset(m.angle, y as usize, x as usize) > -m.distance + margin * ANALYSIS_SIZE as f64 / scene.frame.crop_w
        });
        if fits && clear_of_muscle {
            return (y, x);
        }
    }
    (scene.cy.clamp(0.0, h - 1.0), scene.ax * 0.4)
}

fn paint(scene: &mut Scene, rng: &mut impl Rng, lo: u8, hi: u8, mut covered: impl FnMut(f64, f64) -> bool) {
    let (h, w) = (scene.image.height(), scene.image.width());
    for y in 0..h {
        for x in 0..w {
            if covered(y as f64, x as f64) {
                scene.image.set(y, x, rng.random_range(lo..=hi));
            }
        }
    }
}

/// Applies one outlier signature in place.
pub fn inject(kind: OutlierType, scene: &mut Scene, rng: &mut impl Rng) {
    let (h, w) = (scene.image.height(), scene.image.width());
    match kind {
        OutlierType::Implant => {
            let (ry, rx) = (scene.ay * rng.random_range(0.25..0.33), scene.ax * rng.random_range(0.30..0.40));
            let cy = scene.cy.clamp(ry, h as f64 - ry);
            let cx = scene.ax * rng.random_range(0.35..0.45);
            paint(scene, rng, 242, 252, |y, x| ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) < 1.0);
        }
        OutlierType::Pacemaker => {
            let (bh, bw): (f64, f64) = (rng.random_range(40.0..80.0), rng.random_range(40.0..80.0));
            let (cy, cx) = interior_point(scene, rng, bh.max(bw) / 2.0 + 4.0);
            let r = 10.0;
            paint(scene, rng, 245, 255, |y, x| {
                let dy = ((y - cy).abs() - (bh / 2.0 - r)).max(0.0);
                let dx = ((x - cx).abs() - (bw / 2.0 - r)).max(0.0);
                (y - cy).abs() <= bh / 2.0 && (x - cx).abs() <= bw / 2.0 && dy * dy + dx * dx <= r * r
            });
        }
        OutlierType::LoopRecorder => {
            let (len, thick) = (rng.random_range(30.0..40.0), rng.random_range(6.0..9.0));
            let (cy, cx) = interior_point(scene, rng, len / 2.0 + 4.0);
            let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = a.sin_cos();
            paint(scene, rng, 245, 255, |y, x| {
                let (u, v) = ((x - cx) * c + (y - cy) * s, -(x - cx) * s + (y - cy) * c);
                u.abs() <= len / 2.0 && v.abs() <= thick / 2.0
            });
        }
        OutlierType::ImproperRadiography1 => {
            let Some(m) = scene.muscle else {
                return;
            };
            let n = rng.random_range(3..=5) as f64;
            let period = rng.random_range(13.0..15.0);
            let start = 7.0;
            let frame = scene.frame;
            let (low, amp) = (m.level - 85.0, 100.0);
            for y in 0..h {
                for x in 0..w {
                    if !scene.in_breast(y as f64, x as f64) {
                        continue;
                    }
                    let t = -m.distance - frame.offset(m.angle, y, x) - start;
                    if t >= 0.0 && t < n * period {
                        let v = low + amp * (t / period).fract() + rng.random_range(-2.0..2.0);
                        scene.image.set(y, x, v.round().clamp(12.0, 215.0) as u8);
                    }
                }
            }
        }
        OutlierType::ImproperRadiography2 => {
            let band = (w as f64 * rng.random_range(0.06..0.10)) as usize;
            let level = rng.random_range(170..=195);
            for y in 0..h {
                for x in 0..band {
                    scene.image.set(y, x, level + rng.random_range(0..=5));
                }
            }
        }
        OutlierType::LesionCalcification => {
            let (cy, cx) = interior_point(scene, rng, 45.0);
            for _ in 0..rng.random_range(6..=12) {
                let (by, bx) = (cy + rng.random_range(-30.0..30.0), cx + rng.random_range(-30.0..30.0));
                let r: f64 = rng.random_range(1.5..4.0);
                paint(scene, rng, 235, 255, |y, x| (y - by).powi(2) + (x - bx).powi(2) <= r * r);
            }
        }
        OutlierType::ExposureError => {
            let (gain, offset) = if rng.random_bool(0.5) {
                (rng.random_range(1.4..1.6), 30.0)
            } else {
                (rng.random_range(0.30..0.45), -10.0)
            };
            for p in scene.image.pixels_mut() {
                if *p > 10 {
                    *p = (*p as f64 * gain + offset).round().clamp(12.0, 255.0) as u8;
                }
            }
        }
        OutlierType::ImproperPlacement => {
            let before = scene.image.pixels().iter().filter(|&&p| p > 10).count();
            let up = scene.meta.view == View::MLO || rng.random_bool(0.5);
            let mut frac: f64 = rng.random_range(0.30..0.45);
            loop {
                let shift = (frac * h as f64) as usize;
                let shifted = GrayImage::from_fn(h, w, |y, x| {
                    let src = if up { y + shift } else { y.wrapping_sub(shift) };
                    if src < h {
                        scene.image.get(src, x)
                    } else {
                        (x as u8 ^ y as u8) % 6
                    }
                });
                let after = shifted.pixels().iter().filter(|&&p| p > 10).count();
                if after as f64 <= 0.75 * before as f64 || frac > 0.9 {
                    scene.image = shifted;
                    break;
                }
                frac += 0.05;
            }
        }
    }
}

/// One generated image with its truth.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub image: GrayImage,
    pub meta: ImageMeta,
    pub outlier_type: Option<OutlierType>,
    pub muscle: Option<MuscleGeometry>,
}

/// Image `index` of the corpus; depends only on `(spec.seed, index)`.
pub fn generate_image(spec: &SynthSpec, index: usize, outlier_type: Option<OutlierType>) -> SynthImage {
    let mut rng = spec.image_rng(index);
    let laterality = if rng.random_bool(spec.p_right) { Laterality::R } else { Laterality::L };
    let mut view = if rng.random_bool(spec.p_mlo) { View::MLO } else { View::CC };
    if outlier_type == Some(OutlierType::ImproperRadiography1) {
        view = View::MLO;
    }
    let mut scene = generate_inlier(spec, &mut rng, index as u32, laterality, view);
    if let Some(t) = outlier_type {
        inject(t, &mut scene, &mut rng);
    }
    SynthImage { image: scene.finish(), meta: scene.meta.clone(), outlier_type, muscle: scene.muscle }
}

/// Every image in memory, in index order.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    let types = spec.assignments();
    Ok((0..spec.n_images).into_par_iter().map(|i| generate_image(spec, i, types[i])).collect())
}

/// Metadata line of the corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub image_id: u32,
    pub laterality: Laterality,
    pub view: View,
    pub manufacturer: String,
    pub outlier_type: Option<OutlierType>,
    pub source: String,
}

impl SynthRecord {
    pub fn meta(&self) -> ImageMeta {
        ImageMeta {
            image_id: self.image_id,
            laterality: self.laterality,
            view: self.view,
            manufacturer: self.manufacturer.clone(),
            source: Some(self.source.clone()),
        }
    }
}

pub const METADATA_FILE: &str = "metadata.jsonl";
pub const TRUTH_FILE: &str = "truth.csv";
pub const IMAGE_DIR: &str = "images";

/// Writes `images/NNNNN.png`, `metadata.jsonl` and `truth.csv` under `dir`.
pub fn write_corpus(spec: &SynthSpec, dir: &Path) -> Result<Vec<SynthRecord>> {
    spec.validate()?;
    let types = spec.assignments();
    let image_dir = dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir)?;
    let records: Vec<SynthRecord> = (0..spec.n_images)
        .into_par_iter()
        .map(|i| -> Result<SynthRecord> {
            let img = generate_image(spec, i, types[i]);
            let name = format!("{IMAGE_DIR}/{i:05}.png");
            img.image.write(dir.join(&name))?;
            Ok(SynthRecord {
                image_id: img.meta.image_id,
                laterality: img.meta.laterality,
                view: img.meta.view,
                manufacturer: img.meta.manufacturer,
                outlier_type: img.outlier_type,
                source: name,
            })
        })
        .collect::<Result<_>>()?;
    write_metadata(&dir.join(METADATA_FILE), &records)?;
    write_truth(&dir.join(TRUTH_FILE), &records)?;
    Ok(records)
}

pub fn write_metadata(path: &Path, records: &[SynthRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<Vec<SynthRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(SynthError::from))
        .collect()
}

/// `image_id,label,outlier_type`
pub fn write_truth(path: &Path, records: &[SynthRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SynthError::Csv(e.to_string()))?;
    w.write_record(["image_id", "label", "outlier_type"]).map_err(|e| SynthError::Csv(e.to_string()))?;
    for r in records {
        let t = r.outlier_type.map(|t| t.as_str()).unwrap_or("");
        w.write_record([r.image_id.to_string(), u8::from(r.outlier_type.is_some()).to_string(), t.to_string()])
            .map_err(|e| SynthError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Truth rows in file order; `#` lines are skipped.
pub fn read_truth(path: &Path) -> Result<Vec<(u32, Option<OutlierType>)>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| SynthError::Csv(e.to_string()))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| SynthError::Csv(e.to_string()))?;
            let id: u32 = rec.get(0).unwrap_or("").parse().map_err(|_| SynthError::Csv(format!("bad id in {rec:?}")))?;
            let t = match rec.get(2).unwrap_or("") {
                "" => None,
                s => Some(s.parse().map_err(|e: crate::taxonomy::UnknownType| SynthError::Csv(e.to_string()))?),
            };
            Ok((id, t))
        })
        .collect()
}

pub fn image_path(dir: &Path, record: &SynthRecord) -> PathBuf {
    dir.join(&record.source)
}
