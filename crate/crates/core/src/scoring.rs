//! The fifteen outlier scores, min-max normalisation and the two ensembles.
//!
//! Columns are numbered 1..=15: three generative losses, three detectors on
//! the latent vectors, then each loss appended to the latent vector and fed
//! to the same three detectors. Every column is oriented smaller-is-outlier.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cvae::{batch_from_pixels, elbo_terms, reparameterize, CvaeError, CvaeModel, LatentPosterior};
use crate::detectors::{
    if_fit, lof_fit_with, ocsvm_fit, DetectorError, IsolationForestConfig, IsolationForestModel, LofModel, OcsvmConfig,
    OcsvmModel,
};

pub const N_SCORES: usize = 15;

pub const SCORE_NAMES: [&str; N_SCORES] = [
    "Reconstruction loss",
    "KLD",
    "ELBO",
    "latent IF",
    "latent LOF",
    "latent OCSVM",
    "Reconstruction latent IF",
    "Reconstruction latent LOF",
    "Reconstruction latent OCSVM",
    "KLD latent IF",
    "KLD latent LOF",
    "KLD latent OCSVM",
    "ELBO latent IF",
    "ELBO latent LOF",
    "ELBO latent OCSVM",
];

/// Columns combined by the ensembles.
pub const ENSEMBLE_COLUMNS: [usize; 3] = [1, 2, 6];

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Model(#[from] CvaeError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("score column {0} is missing")]
    MissingColumn(usize),
    #[error("no scores to rank")]
    Empty,
    #[error("fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("{what}: {found} entries, expected {expected}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error("non-finite score in column {column} for image {image_id}")]
    NonFinite { column: usize, image_id: u32 },
    #[error("scores csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ScoringError> = std::result::Result<T, E>;

pub fn column_key(number: usize) -> String {
    format!("score_{number:02}")
}

/// Generative losses of one image on the `[0, 255]` pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerativeScores {
    pub recon: f64,
    pub kld: f64,
    pub elbo: f64,
}

impl GenerativeScores {
    /// Columns 1–3: `(−recon, −kld, elbo)`.
    pub fn columns(&self) -> [f64; 3] {
        [-self.recon, -self.kld, self.elbo]
    }
}

/// Posterior and generative losses of every image, reconstructing from the
/// posterior mean. Batches are processed in parallel; results keep input order.
pub fn generative_scores(
    model: &CvaeModel<f32>,
    images: &[&[u8]],
    batch_size: usize,
) -> Result<Vec<(LatentPosterior, GenerativeScores)>> {
    use rayon::prelude::*;
    let cfg = model.config();
    let chunks: Vec<&[&[u8]]> = images.chunks(batch_size.max(1)).collect();
    let per_chunk: Vec<Result<Vec<(LatentPosterior, GenerativeScores)>>> = chunks
        .par_iter()
        .map(|chunk| {
            let batch = batch_from_pixels::<f32>(cfg.resize_h, cfg.resize_w, chunk)?;
            let rec = model.reconstruct(&batch)?;
            chunk
                .iter()
                .zip(rec)
                .map(|(img, (post, x_hat))| {
                    let x: Vec<f64> = img.iter().map(|&p| p as f64).collect();
                    let t = elbo_terms(&x, &post, &x_hat)?;
                    Ok((post, GenerativeScores { recon: t.recon, kld: t.kld, elbo: t.elbo }))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(images.len());
    for c in per_chunk {
        out.extend(c?);
    }
    Ok(out)
}

/// Which latent vector represents an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LatentSource {
    #[default]
    Mean,
    /// One reparameterised draw per image, seeded by `(seed, image id)`.
    Sample { seed: u64 },
}

pub fn latent_vectors(ids: &[u32], posts: &[LatentPosterior], source: LatentSource) -> Vec<Vec<f64>> {
    posts
        .iter()
        .zip(ids)
        .map(|(p, &id)| match source {
            LatentSource::Mean => p.mu.clone(),
            LatentSource::Sample { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((id as u64) << 20).wrapping_mul(0x9e37_79b9));
                let noise: Vec<f64> = (0..p.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
                reparameterize(p, &noise)
            }
        })
        .collect()
}

/// Inputs to the detector columns for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringSet {
    pub ids: Vec<u32>,
    pub latent: Vec<Vec<f64>>,
    pub generative: Vec<GenerativeScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSettings {
    pub isolation_forest: IsolationForestConfig,
    pub lof_k: usize,
    pub ocsvm: OcsvmConfig,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self { isolation_forest: IsolationForestConfig::default(), lof_k: 20, ocsvm: OcsvmConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Detectors {
    iforest: IsolationForestModel,
    lof: LofModel,
    ocsvm: OcsvmModel,
}

impl Detectors {
    fn fit(points: &[Vec<f64>], s: &DetectorSettings) -> Result<Self> {
        let k = s.lof_k.min(points.len().saturating_sub(1)).max(1);
        if k != s.lof_k {
            log::warn!("LOF k = {} reduced to {k} for {} fit points", s.lof_k, points.len());
        }
        Ok(Self {
            iforest: if_fit(points, &s.isolation_forest)?,
            lof: lof_fit_with(points, k, s.isolation_forest.contamination)?,
            ocsvm: ocsvm_fit(points, &s.ocsvm)?,
        })
    }

    fn score(&self, points: &[Vec<f64>], is_fit_set: bool) -> Result<[Vec<f64>; 3]> {
        let lof = if is_fit_set { self.lof.fit_scores.clone() } else { self.lof.score(points)? };
        let oc = if is_fit_set { self.ocsvm.fit_scores.clone() } else { self.ocsvm.score(points)? };
        Ok([self.iforest.score(points)?, lof, oc])
    }
}

/// Affine map placing a loss on the latent coordinate scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendScaling {
    pub min: f64,
    pub max: f64,
    /// Median over latent dimensions of the fit-set coordinate range.
    pub target_range: f64,
}

impl AppendScaling {
    pub fn fit(values: &[f64], latent: &[Vec<f64>]) -> Self {
        let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let dim = latent.first().map_or(0, Vec::len);
        let mut ranges: Vec<f64> = (0..dim)
            .map(|j| {
                let (lo, hi) = latent
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[j]), b.max(p[j])));
                hi - lo
            })
            .collect();
        ranges.sort_by(f64::total_cmp);
        let target_range = match ranges.len() {
            0 => 1.0,
            n if n % 2 == 1 => ranges[n / 2],
            n => 0.5 * (ranges[n / 2 - 1] + ranges[n / 2]),
        };
        Self { min, max, target_range }
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min) * self.target_range
        } else {
            0.5 * self.target_range
        }
    }
}

pub fn append_dimension(latent: &[Vec<f64>], values: &[f64], scaling: &AppendScaling) -> Vec<Vec<f64>> {
    latent
        .iter()
        .zip(values)
        .map(|(p, &v)| {
            let mut q = p.clone();
            q.push(scaling.apply(v));
            q
        })
        .collect()
}

/// Detectors fitted on one split, reusable for scoring any split.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentScorer {
    dim: usize,
    base: Detectors,
    augmented: Vec<(AppendScaling, Detectors)>,
}

fn loss_values(set: &ScoringSet, which: usize) -> Vec<f64> {
    set.generative.iter().map(|g| g.columns()[which]).collect()
}

fn check_set(set: &ScoringSet) -> Result<()> {
    for (what, found) in [("latent vectors", set.latent.len()), ("generative scores", set.generative.len())] {
        if found != set.ids.len() {
            return Err(ScoringError::Length { what, expected: set.ids.len(), found });
        }
    }
    Ok(())
}

impl LatentScorer {
    pub fn fit(fit: &ScoringSet, settings: &DetectorSettings) -> Result<Self> {
        check_set(fit)?;
        let dim = fit.latent.first().map_or(0, Vec::len);
        let base = Detectors::fit(&fit.latent, settings)?;
        let augmented = (0..3)
            .map(|w| {
                let values = loss_values(fit, w);
                let scaling = AppendScaling::fit(&values, &fit.latent);
                let pts = append_dimension(&fit.latent, &values, &scaling);
                Ok((scaling, Detectors::fit(&pts, settings)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, base, augmented })
    }

    pub fn scalings(&self) -> Vec<AppendScaling> {
        self.augmented.iter().map(|(s, _)| *s).collect()
    }

    /// Columns 4–6.
    pub fn latent_columns(&self, set: &ScoringSet, is_fit_set: bool) -> Result<[Vec<f64>; 3]> {
        check_set(set)?;
        if let Some(p) = set.latent.iter().find(|p| p.len() != self.dim) {
            return Err(DetectorError::Dimension { index: 0, expected: self.dim, found: p.len() }.into());
        }
        self.base.score(&set.latent, is_fit_set)
    }

    /// Columns 7–15 in table order: recon IF/LOF/OCSVM, KLD ..., ELBO ....
    pub fn augmented_columns(&self, set: &ScoringSet, is_fit_set: bool) -> Result<Vec<Vec<f64>>> {
        check_set(set)?;
        let mut out = Vec::with_capacity(9);
        for (w, (scaling, det)) in self.augmented.iter().enumerate() {
            let pts = append_dimension(&set.latent, &loss_values(set, w), scaling);
            out.extend(det.score(&pts, is_fit_set)?);
        }
        Ok(out)
    }

    /// All fifteen columns for `set`. `is_fit_set` selects leave-self-out
    /// neighbourhoods and stored decision values for the fit split.
    pub fn score_matrix(&self, set: &ScoringSet, is_fit_set: bool) -> Result<ScoreMatrix> {
        let mut columns: Vec<Vec<f64>> = (0..3).map(|w| loss_values(set, w)).collect();
        columns.extend(self.latent_columns(set, is_fit_set)?);
        columns.extend(self.augmented_columns(set, is_fit_set)?);
        ScoreMatrix::new(set.ids.clone(), columns)
    }
}

/// `(x − min) / (max − min)`; a constant column maps to 0.5.
pub fn min_max_normalize(column: &[f64]) -> Vec<f64> {
    let (lo, hi) = column.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        column.iter().map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.5; column.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    Average,
    Min,
}

/// Per-image mean or minimum of the normalised input columns.
pub fn ensemble(columns: &[&[f64]], mode: EnsembleMode) -> Result<Vec<f64>> {
    let first = columns.first().ok_or(ScoringError::MissingColumn(ENSEMBLE_COLUMNS[0]))?;
    let norm: Vec<Vec<f64>> = columns.iter().map(|c| min_max_normalize(c)).collect();
    for c in &norm {
        if c.len() != first.len() {
            return Err(ScoringError::Length { what: "ensemble column", expected: first.len(), found: c.len() });
        }
    }
    Ok((0..first.len())
        .map(|i| {
            let vals = norm.iter().map(|c| c[i]);
            match mode {
                EnsembleMode::Average => vals.sum::<f64>() / norm.len() as f64,
                EnsembleMode::Min => vals.fold(f64::INFINITY, f64::min),
            }
        })
        .collect())
}

/// `⌈fraction · n⌉`, tolerant of representation error in the product.
pub fn selection_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let r = raw.round();
    let k = if (raw - r).abs() < 1e-9 { r } else { raw.ceil() };
    (k as usize).min(n)
}

/// Indices of the `⌈fraction · N⌉` smallest scores, ties broken by id.
pub fn rank_indices(ids: &[u32], scores: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(ScoringError::Empty);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ScoringError::Fraction(fraction));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(ids[a].cmp(&ids[b])));
    order.truncate(selection_count(fraction, scores.len()));
    Ok(order)
}

/// Ids of the `⌈fraction · N⌉` smallest scores, ties broken by id.
pub fn rank_top_fraction(ids: &[u32], scores: &[f64], fraction: f64) -> Result<Vec<u32>> {
    Ok(rank_indices(ids, scores, fraction)?.into_iter().map(|i| ids[i]).collect())
}

/// Fifteen score columns plus optional ensembles for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub ids: Vec<u32>,
    columns: Vec<Vec<f64>>,
    pub ensemble_avg: Option<Vec<f64>>,
    pub ensemble_min: Option<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<u32>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != N_SCORES {
            return Err(ScoringError::MissingColumn(columns.len() + 1));
        }
        for (c, col) in columns.iter().enumerate() {
            if col.len() != ids.len() {
                return Err(ScoringError::Length { what: "score column", expected: ids.len(), found: col.len() });
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(ScoringError::NonFinite { column: c + 1, image_id: ids[i] });
            }
        }
        Ok(Self { ids, columns, ensemble_avg: None, ensemble_min: None })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Column by its table number, 1..=15.
    pub fn column(&self, number: usize) -> Result<&[f64]> {
        number
            .checked_sub(1)
            .and_then(|i| self.columns.get(i))
            .map(Vec::as_slice)
            .ok_or(ScoringError::MissingColumn(number))
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Computes both ensembles from columns 1, 2 and 6 normalised within this matrix.
    pub fn with_ensembles(mut self) -> Result<Self> {
        let cols: Vec<&[f64]> = ENSEMBLE_COLUMNS.iter().map(|&c| self.column(c)).collect::<Result<_>>()?;
        let avg = ensemble(&cols, EnsembleMode::Average)?;
        let min = ensemble(&cols, EnsembleMode::Min)?;
        self.ensemble_avg = Some(avg);
        self.ensemble_min = Some(min);
        Ok(self)
    }

    /// `(column, min, max)` of each ensemble input.
    pub fn normalization_constants(&self) -> Vec<(usize, f64, f64)> {
        ENSEMBLE_COLUMNS
            .iter()
            .map(|&c| {
                let col = &self.columns[c - 1];
                let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                (c, lo, hi)
            })
            .collect()
    }

    /// Rows restricted to `keep` (indices into this matrix), ensembles dropped.
    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
            columns: self.columns.iter().map(|c| keep.iter().map(|&i| c[i]).collect()).collect(),
            ensemble_avg: None,
            ensemble_min: None,
        }
    }

    /// CSV `image_id,score_01..score_15,ensb_avg,ensb_min`, preceded by
    /// `# `-prefixed header lines.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        for (c, lo, hi) in self.normalization_constants() {
            writeln!(out, "# normalization {}: min={lo} max={hi}", column_key(c))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec!["image_id".to_string()];
        head.extend((1..=N_SCORES).map(column_key));
        head.extend(["ensb_avg".to_string(), "ensb_min".to_string()]);
        w.write_record(&head).map_err(|e| ScoringError::Csv(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].to_string()];
            rec.extend(self.columns.iter().map(|c| c[i].to_string()));
            for e in [&self.ensemble_avg, &self.ensemble_min] {
                rec.push(e.as_ref().map_or_else(String::new, |v| v[i].to_string()));
            }
            w.write_record(&rec).map_err(|e| ScoringError::Csv(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses [`ScoreMatrix::write_csv`] output; returns the header lines too.
    pub fn read_csv<R: BufRead>(input: R) -> Result<(Self, Vec<String>)> {
        let mut header = Vec::new();
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            match line.strip_prefix('#') {
                Some(h) => header.push(h.trim_start().to_string()),
                None => {
                    body.push_str(&line);
                    body.push('\n');
                }
            }
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let heads = r.headers().map_err(|e| ScoringError::Csv(e.to_string()))?.clone();
        if heads.len() != N_SCORES + 3 || &heads[0] != "image_id" {
            return Err(ScoringError::Csv(format!("unexpected header {heads:?}")));
        }
        let mut ids = Vec::new();
        let mut columns = vec![Vec::new(); N_SCORES];
        let (mut avg, mut min) = (Vec::new(), Vec::new());
        let parse = |s: &str| s.parse::<f64>().map_err(|e| ScoringError::Csv(format!("{s:?}: {e}")));
        for rec in r.records() {
            let rec = rec.map_err(|e| ScoringError::Csv(e.to_string()))?;
            ids.push(rec[0].parse().map_err(|e| ScoringError::Csv(format!("image id {:?}: {e}", &rec[0])))?);
            for c in 0..N_SCORES {
                columns[c].push(parse(&rec[c + 1])?);
            }
            if !rec[N_SCORES + 1].is_empty() {
                avg.push(parse(&rec[N_SCORES + 1])?);
                min.push(parse(&rec[N_SCORES + 2])?);
            }
        }
        let mut m = Self::new(ids, columns)?;
        if avg.len() == m.len() && !avg.is_empty() {
            m.ensemble_avg = Some(avg);
            m.ensemble_min = Some(min);
        }
        Ok((m, header))
    }
}
