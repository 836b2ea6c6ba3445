//! erode, muscle and their hyperparameter grids.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use mtriage_core::eval::{bootstrap_metrics, BootstrapSpec, LabeledScores, Resampling, ThresholdGrid};
use mtriage_core::imgproc::{erosion_scores_for_grid, muscle_scores_for_grid, ErosionParams, MuscleOutcome, MuscleParams};

use crate::config::Config;
use crate::data::{self, Corpus, EROSION_FILE, MUSCLE_FILE};
use crate::rundir::Run;
use crate::{CliError, GridKind};

pub fn erosion_params(cfg: &Config) -> Result<ErosionParams, CliError> {
    Ok(ErosionParams {
        threshold: cfg.get("erosion.threshold")?,
        kernel_size: cfg.get("erosion.kernel")?,
        iterations: cfg.get("erosion.iterations")?,
    })
}

pub fn muscle_params(cfg: &Config) -> Result<MuscleParams, CliError> {
    Ok(MuscleParams {
        lower_distance: cfg.get("muscle.lower_distance")?,
        canny_low: cfg.get("muscle.canny_low")?,
        canny_high: cfg.get("muscle.canny_high")?,
        hough_threshold: cfg.get("muscle.hough_threshold")?,
        ..MuscleParams::default()
    })
}

fn erosion_table(corpus: &Corpus, grid: &[ErosionParams]) -> Result<Vec<Vec<u64>>, CliError> {
    corpus.records.par_iter().map(|r| Ok(erosion_scores_for_grid(&corpus.image(r)?, grid))).collect()
}

fn muscle_table(corpus: &Corpus, grid: &[MuscleParams]) -> Result<Vec<Vec<MuscleOutcome>>, CliError> {
    corpus
        .records
        .par_iter()
        .map(|r| Ok(muscle_scores_for_grid(&corpus.image(r)?, &r.meta(), grid)?))
        .collect()
}

pub fn erode(cfg: &Config) -> Result<PathBuf, CliError> {
    let corpus = Corpus::open(&cfg.input("preprocessed")?)?;
    let params = erosion_params(cfg)?;
    let run = Run::create(cfg, "erode", &["preprocessed", "erosion"])?;
    let table = erosion_table(&corpus, &[params])?;
    let mut body = String::from("image_id,pixel_sum\n");
    for (r, v) in corpus.records.iter().zip(table) {
        writeln!(body, "{},{}", r.image_id, v[0]).expect("string write");
    }
    let extra = [format!("threshold={} kernel={} iterations={}", params.threshold, params.kernel_size, params.iterations)];
    run.write_text(EROSION_FILE, &extra, body.as_bytes())?;
    run.finish()
}

pub fn muscle(cfg: &Config) -> Result<PathBuf, CliError> {
    let corpus = Corpus::open(&cfg.input("preprocessed")?)?;
    let params = muscle_params(cfg)?;
    let run = Run::create(cfg, "muscle", &["preprocessed", "muscle"])?;
    let table = muscle_table(&corpus, &[params])?;
    let mut body = String::from("image_id,line_count,excluded,status\n");
    for (r, v) in corpus.records.iter().zip(table) {
        let status = match &v[0] {
            MuscleOutcome::Skipped => "skipped",
            MuscleOutcome::NoBoundary => "no_boundary",
            MuscleOutcome::Lines { .. } => "counted",
        };
        writeln!(body, "{},{},{},{status}", r.image_id, v[0].line_count(), u8::from(v[0].excluded())).expect("string write");
    }
    let extra = [format!(
        "lower_distance={} canny_low={} canny_high={} hough_threshold={} max_lines={}",
        params.lower_distance, params.canny_low, params.canny_high, params.hough_threshold, params.max_lines
    )];
    run.write_text(MUSCLE_FILE, &extra, body.as_bytes())?;
    run.finish()
}

/// One grid row: configuration columns and bootstrap recall per fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub config: Vec<String>,
    pub recall: Vec<(f64, f64)>,
}

/// Bootstrap recall of each ascending key column at `fractions`.
pub fn grid_recalls(
    ids: &[u32],
    types: &[Option<mtriage_core::taxonomy::OutlierType>],
    keys: &[Vec<f64>],
    fractions: &ThresholdGrid,
    spec: &BootstrapSpec,
) -> Result<Vec<Vec<(f64, f64)>>, CliError> {
    keys.iter()
        .map(|col| {
            let ls = LabeledScores::from_types(ids.to_vec(), col.clone(), types.to_vec())?;
            let rep = bootstrap_metrics(&ls, spec, fractions)?;
            Ok(rep.per_fraction.iter().map(|f| (f.recall.mean, f.recall.sd)).collect())
        })
        .collect()
}

/// Index of the row with the highest mean recall at the first fraction;
/// ties keep the earlier row.
pub fn argmax(rows: &[GridRow]) -> Option<usize> {
    (0..rows.len()).fold(None, |best, i| match best {
        Some(b) if rows[b].recall[0].0 >= rows[i].recall[0].0 => Some(b),
        _ => Some(i),
    })
}

pub fn grid(cfg: &Config, kind: GridKind) -> Result<PathBuf, CliError> {
    let dir = cfg.input("preprocessed")?;
    let corpus = Corpus::open(&dir)?;
    let truth = data::truth(cfg, Some(&dir))?;
    let fractions: Vec<f64> = cfg.list("cascade.fractions")?;
    let tgrid = ThresholdGrid::new(fractions.clone())?;
    let spec = BootstrapSpec { n_replicates: cfg.get("eval.bootstraps")?, seed: cfg.get("seed")?, resampling: Resampling::Stratified };
    let (name, prefixes): (&str, &[&str]) = match kind {
        GridKind::Erosion => ("erosion", &["seed", "preprocessed", "truth", "eval", "cascade.fractions"]),
        GridKind::Muscle => ("muscle", &["seed", "preprocessed", "truth", "eval", "cascade.fractions", "muscle"]),
    };
    let run = Run::create(cfg, &format!("grid-{name}"), prefixes)?;

    let ids: Vec<u32> = corpus.records.iter().map(|r| r.image_id).collect();
    let types = ids
        .iter()
        .map(|id| truth.get(id).copied().ok_or_else(|| CliError::Missing(format!("no truth label for image {id}"))))
        .collect::<Result<Vec<_>, _>>()?;

    // Larger raw values are more outlying, so keys are negated; images the
    // muscle analysis excludes sort after every counted one.
    let (head, configs, keys): (&str, Vec<Vec<String>>, Vec<Vec<f64>>) = match kind {
        GridKind::Erosion => {
            let g = ErosionParams::search_grid();
            let table = erosion_table(&corpus, &g)?;
            let keys = (0..g.len()).map(|c| table.iter().map(|row| -(row[c] as f64)).collect()).collect();
            let configs = g.iter().map(|p| vec![p.threshold.to_string(), p.kernel_size.to_string(), p.iterations.to_string()]).collect();
            ("threshold,kernel_size,iterations", configs, keys)
        }
        GridKind::Muscle => {
            let g = muscle_params(cfg)?.search_grid();
            let table = muscle_table(&corpus, &g)?;
            let keys = (0..g.len())
                .map(|c| table.iter().map(|row| row[c].rank_value().map_or(1.0, |n| -f64::from(n))).collect())
                .collect();
            let configs = g
                .iter()
                .map(|p| {
                    vec![p.lower_distance.to_string(), p.canny_low.to_string(), p.canny_high.to_string(), p.hough_threshold.to_string()]
                })
                .collect();
            ("lower_distance,canny_low,canny_high,hough_threshold", configs, keys)
        }
    };
    if configs.is_empty() {
        return Err(CliError::Config("empty grid".into()));
    }
    let recalls = grid_recalls(&ids, &types, &keys, &tgrid, &spec)?;
    let rows: Vec<GridRow> = configs.into_iter().zip(recalls).map(|(config, recall)| GridRow { config, recall }).collect();
    let best = argmax(&rows);

    let mut body = String::from(head);
    for f in &fractions {
        write!(body, ",recall_{f}_mean,recall_{f}_sd").expect("string write");
    }
    body.push_str(",best\n");
    for (i, row) in rows.iter().enumerate() {
        body.push_str(&row.config.join(","));
        for (m, s) in &row.recall {
            write!(body, ",{m},{s}").expect("string write");
        }
        writeln!(body, ",{}", u8::from(best == Some(i))).expect("string write");
    }
    let extra = [format!("bootstraps {} stratified; best = highest mean recall at {}", spec.n_replicates, fractions[0])];
    run.write_text("grid.csv", &extra, body.as_bytes())?;
    run.finish()
}
