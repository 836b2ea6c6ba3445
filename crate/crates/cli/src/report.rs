//! eval and cascade.

use std::fmt::Write as _;
use std::path::PathBuf;

use mtriage_core::eval::{
    bootstrap_cascade, bootstrap_metrics_with, cascade_recall, per_type_eval, pr_roc_curves, report_rows, write_curves_jsonl,
    write_metrics_csv, BootstrapSpec, CascadeMethod, CurveRecord, EvalError, LabeledScores, MetricRow, Resampling, ThresholdGrid,
};
use mtriage_core::scoring::{column_key, ensemble, EnsembleMode, ScoreMatrix, ENSEMBLE_COLUMNS, N_SCORES};
use mtriage_core::taxonomy::OutlierType;

use crate::config::Config;
use crate::data;
use crate::rundir::Run;
use crate::CliError;

fn bootstrap_spec(cfg: &Config) -> Result<BootstrapSpec, CliError> {
    Ok(BootstrapSpec { n_replicates: cfg.get("eval.bootstraps")?, seed: cfg.get("seed")?, resampling: Resampling::Stratified })
}

fn ensemble_mode(cfg: &Config) -> Result<EnsembleMode, CliError> {
    match cfg.raw("cascade.ensemble") {
        "avg" => Ok(EnsembleMode::Average),
        "min" => Ok(EnsembleMode::Min),
        other => Err(CliError::Config(format!("cascade.ensemble {other:?}: expected avg or min"))),
    }
}

/// Truth types aligned with the matrix rows.
fn aligned_types(m: &ScoreMatrix, cfg: &Config) -> Result<Vec<Option<OutlierType>>, CliError> {
    let truth = data::truth(cfg, None)?;
    m.ids
        .iter()
        .map(|id| truth.get(id).copied().ok_or_else(|| CliError::Missing(format!("no truth label for image {id}"))))
        .collect()
}

/// Ensemble recomputed from the rows of one replicate, so its normalisation
/// sees only that sample.
fn ensemble_of_rows(m: &ScoreMatrix, rows: &[usize], mode: EnsembleMode) -> Vec<f64> {
    let cols: Vec<Vec<f64>> =
        ENSEMBLE_COLUMNS.iter().map(|&c| rows.iter().map(|&i| m.columns()[c - 1][i]).collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    ensemble(&refs, mode).expect("ensemble inputs share a length")
}

pub fn eval(cfg: &Config) -> Result<PathBuf, CliError> {
    let (split, m) = data::scores(cfg)?;
    let types = aligned_types(&m, cfg)?;
    let spec = bootstrap_spec(cfg)?;
    let grid = ThresholdGrid::standard();
    let fractions = ThresholdGrid::new(cfg.list("cascade.fractions")?)?;
    let run = Run::create(cfg, "eval", &["seed", "scores", "truth", "eval", "cascade"])?;

    let mut columns: Vec<(String, Vec<f64>, Option<EnsembleMode>)> =
        (1..=N_SCORES).map(|c| (column_key(c), m.columns()[c - 1].clone(), None)).collect();
    let avg = m.ensemble_avg.clone().ok_or_else(|| CliError::Failed("scores lack ensembles".into()))?;
    let min = m.ensemble_min.clone().ok_or_else(|| CliError::Failed("scores lack ensembles".into()))?;
    columns.push(("ensb_avg".into(), avg, Some(EnsembleMode::Average)));
    columns.push(("ensb_min".into(), min, Some(EnsembleMode::Min)));

    let mut rows: Vec<MetricRow> = Vec::new();
    let mut curves = Vec::new();
    let mut per_type = String::from("score_name,split,outlier_type,auroc,auprc,max_precision,max_recall,max_f1\n");
    for (name, scores, mode) in &columns {
        let ls = LabeledScores::from_types(m.ids.clone(), scores.clone(), types.clone())?;
        let rescore = |idx: &[usize]| match mode {
            Some(mode) => ensemble_of_rows(&m, idx, *mode),
            None => idx.iter().map(|&i| scores[i]).collect(),
        };
        let report = bootstrap_metrics_with(&ls, &spec, &grid, &rescore)?;
        rows.extend(report_rows(name, &split, &report));
        let at = bootstrap_metrics_with(&ls, &spec, &fractions, &rescore)?;
        for f in &at.per_fraction {
            for (metric, s) in [("precision", f.precision), ("recall", f.recall), ("f1", f.f1)] {
                rows.push(MetricRow {
                    score_name: name.clone(),
                    split: split.clone(),
                    metric: format!("{metric}@{}", f.fraction),
                    mean: s.mean,
                    sd: s.sd,
                });
            }
        }
        curves.push(CurveRecord { score_name: name.clone(), split: split.clone(), curves: pr_roc_curves(&ls)? });
        for kind in OutlierType::ALL {
            match per_type_eval(&ls, kind, &grid, spec.seed) {
                Ok(p) => writeln!(
                    per_type,
                    "{name},{split},{kind},{},{},{},{},{}",
                    p.auroc, p.auprc, p.max_precision, p.max_recall, p.max_f1
                )
                .expect("string write"),
                Err(EvalError::TypeAbsent(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &rows)?;
    run.write_text("metrics.csv", &[format!("split {split} n={} bootstraps={}", m.len(), spec.n_replicates)], &buf)?;
    let mut buf = Vec::new();
    write_curves_jsonl(&mut buf, &curves)?;
    std::fs::write(run.path("curves.jsonl"), buf)?;
    run.write_text("per_type.csv", &[format!("split {split}")], per_type.as_bytes())?;
    run.finish()
}

pub fn cascade(cfg: &Config) -> Result<PathBuf, CliError> {
    let (split, m) = data::scores(cfg)?;
    let types = aligned_types(&m, cfg)?;
    let erosion = data::read_erosion(&cfg.input("erosion")?)?;
    let muscle = data::read_muscle(&cfg.input("muscle")?)?;
    let mode = ensemble_mode(cfg)?;
    let fractions: Vec<f64> = cfg.list("cascade.fractions")?;
    let spec = bootstrap_spec(cfg)?;
    let run = Run::create(cfg, "cascade", &["seed", "scores", "truth", "erosion", "muscle", "eval", "cascade"])?;

    let ens = match mode {
        EnsembleMode::Average => m.ensemble_avg.clone(),
        EnsembleMode::Min => m.ensemble_min.clone(),
    }
    .ok_or_else(|| CliError::Failed("scores lack ensembles".into()))?;
    let ero: Vec<Option<f64>> = m.ids.iter().map(|id| erosion.get(id).map(|&v| v as f64)).collect();
    let mus: Vec<Option<f64>> = m.ids.iter().map(|id| muscle.get(id).copied().flatten().map(f64::from)).collect();
    let reference: Vec<bool> = types.iter().map(Option::is_some).collect();

    let mut body = String::from(
        "fraction,stage,method,alone,cumulative,union_size,alone_mean,alone_sd,cumulative_mean,cumulative_sd\n",
    );
    for &f in &fractions {
        let methods = [
            CascadeMethod::ascending("cvae_ensemble", &ens, f),
            CascadeMethod::descending("erosion", &ero, f),
            CascadeMethod::descending("muscle", &mus, f),
        ];
        let point = cascade_recall(&m.ids, &reference, &methods)?;
        let boot = bootstrap_cascade(&m.ids, &reference, &types, &methods, &spec)?;
        for (k, (s, b)) in point.stages.iter().zip(&boot).enumerate() {
            writeln!(
                body,
                "{f},{},{},{},{},{},{},{},{},{}",
                k + 1,
                s.name,
                s.alone,
                s.cumulative,
                point.union_size,
                b.alone.mean,
                b.alone.sd,
                b.cumulative.mean,
                b.cumulative.sd
            )
            .expect("string write");
        }
    }
    let extra = [format!("split {split} n={} outliers={} bootstraps={}", m.len(), reference.iter().filter(|&&r| r).count(), spec.n_replicates)];
    run.write_text("cascade.csv", &extra, body.as_bytes())?;
    run.finish()
}
