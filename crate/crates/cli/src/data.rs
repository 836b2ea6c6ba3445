//! Reading the artifacts one command hands to the next.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mtriage_core::imgproc::{resize_bilinear, GrayImage};
use mtriage_core::scoring::ScoreMatrix;
use mtriage_core::synth::{image_path, read_metadata, read_truth, SynthRecord, METADATA_FILE, TRUTH_FILE};
use mtriage_core::taxonomy::OutlierType;
use mtriage_core::triage::read_exclusions;

use crate::config::Config;
use crate::CliError;

pub const SPLIT_FILE: &str = "split.csv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const EROSION_FILE: &str = "erosion.csv";
pub const MUSCLE_FILE: &str = "muscle.csv";
pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

pub fn scores_file_name(split: &str) -> String {
    format!("scores_{split}.csv")
}

/// An image directory with its `metadata.jsonl`.
pub struct Corpus {
    pub dir: PathBuf,
    pub records: Vec<SynthRecord>,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let meta = dir.join(METADATA_FILE);
        if !meta.is_file() {
            return Err(CliError::Missing(format!("{} has no {METADATA_FILE}", dir.display())));
        }
        let records = read_metadata(&meta).map_err(|e| CliError::Failed(format!("{}: {e}", meta.display())))?;
        Ok(Self { dir: dir.to_path_buf(), records })
    }

    pub fn image(&self, r: &SynthRecord) -> Result<GrayImage, CliError> {
        GrayImage::read(image_path(&self.dir, r)).map_err(|e| CliError::Failed(format!("image {}: {e}", r.image_id)))
    }

    /// Pixels of `r` resized to `h`×`w`.
    pub fn pixels(&self, r: &SynthRecord, h: usize, w: usize) -> Result<Vec<u8>, CliError> {
        let img = self.image(r)?;
        Ok(if img.height() == h && img.width() == w { img.into_pixels() } else { resize_bilinear(&img, h, w).into_pixels() })
    }

    pub fn without(mut self, excluded: &BTreeSet<u32>) -> Self {
        self.records.retain(|r| !excluded.contains(&r.image_id));
        self
    }
}

pub fn exclusions(cfg: &Config) -> Result<BTreeSet<u32>, CliError> {
    match cfg.optional_input("exclude")? {
        Some(p) => read_exclusions(&p).map_err(|e| CliError::Failed(e.to_string())),
        None => Ok(BTreeSet::new()),
    }
}

/// `image_id → outlier type` from `truth`, or from the truth file that
/// travels with `fallback_dir`.
pub fn truth(cfg: &Config, fallback_dir: Option<&Path>) -> Result<BTreeMap<u32, Option<OutlierType>>, CliError> {
    let path = match (cfg.optional_input("truth")?, fallback_dir) {
        (Some(p), _) => p,
        (None, Some(d)) if d.join(TRUTH_FILE).is_file() => d.join(TRUTH_FILE),
        _ => return Err(CliError::Missing("no truth labels (--truth)".into())),
    };
    let path = if path.is_dir() { path.join(TRUTH_FILE) } else { path };
    Ok(read_truth(&path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?.into_iter().collect())
}

/// Rows of a `#`-commented CSV with a header line.
pub fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    r.records().collect::<Result<_, _>>().map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T, CliError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Failed(format!("{}: bad field {i} in {rec:?}", path.display())))
}

/// `file` itself, or `dir/name` when a run directory is given.
pub fn artifact(path: &Path, name: &str) -> Result<PathBuf, CliError> {
    let p = if path.is_dir() { path.join(name) } else { path.to_path_buf() };
    if !p.is_file() {
        return Err(CliError::Missing(format!("{} not found", p.display())));
    }
    Ok(p)
}

/// Split name per image id.
pub fn read_split(path: &Path) -> Result<BTreeMap<u32, String>, CliError> {
    read_rows(path)?.iter().map(|r| Ok((field(r, 0, path)?, field(r, 1, path)?))).collect()
}

/// `image_id → pixel_sum`.
pub fn read_erosion(path: &Path) -> Result<BTreeMap<u32, u64>, CliError> {
    let path = artifact(path, EROSION_FILE)?;
    read_rows(&path)?.iter().map(|r| Ok((field(r, 0, &path)?, field(r, 1, &path)?))).collect()
}

/// `image_id → line count`, `None` when excluded from ranking.
pub fn read_muscle(path: &Path) -> Result<BTreeMap<u32, Option<u32>>, CliError> {
    let path = artifact(path, MUSCLE_FILE)?;
    read_rows(&path)?
        .iter()
        .map(|r| {
            let excluded: u8 = field(r, 2, &path)?;
            let n: u32 = field(r, 1, &path)?;
            Ok((field(r, 0, &path)?, (excluded == 0).then_some(n)))
        })
        .collect()
}

/// A scores CSV; for a score run directory, `eval.split` or else the test
/// split, falling back to the all-images file.
pub fn scores(cfg: &Config) -> Result<(String, ScoreMatrix), CliError> {
    let path = cfg.input("scores")?;
    let (split, file) = if path.is_dir() {
        let wanted: Vec<String> = match cfg.optional::<String>("eval.split")? {
            Some(s) => vec![s],
            None => vec!["test".into(), "all".into()],
        };
        wanted
            .iter()
            .map(|s| (s.clone(), path.join(scores_file_name(s))))
            .find(|(_, f)| f.is_file())
            .ok_or_else(|| CliError::Missing(format!("no scores for {wanted:?} in {}", path.display())))?
    } else {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        (stem.strip_prefix("scores_").unwrap_or(&stem).to_string(), path)
    };
    Ok((split, read_scores(&file)?))
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
    let (m, _) = ScoreMatrix::read_csv(std::io::BufReader::new(f))?;
    Ok(if m.ensemble_avg.is_some() { m } else { m.with_ensembles()? })
}
