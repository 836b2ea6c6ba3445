//! Contingency metrics, ROC/PR curves, the threshold-fraction grid,
//! stratified bootstrap, per-type evaluation and cascaded recall.
//!
//! Scores are oriented smaller-is-outlier throughout; descending detectors
//! are negated by the caller.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::selection_count;
use crate::taxonomy::OutlierType;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no images to evaluate")]
    Empty,
    #[error("metric undefined: only one class present")]
    SingleClass,
    #[error("fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("{what}: {found} entries, expected {expected}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error("duplicate image id {0}")]
    DuplicateId(u32),
    #[error("non-finite score for image {0}")]
    NonFinite(u32),
    #[error("outlier type {0} absent from the data")]
    TypeAbsent(OutlierType),
    #[error("threshold grid must be strictly increasing within (0, 1]")]
    Grid,
    #[error("method {0} has no ranking")]
    MissingRanking(String),
    #[error("no reference outliers")]
    NoReference,
    #[error("metrics output: {0}")]
    Output(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// One score column with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    ids: Vec<u32>,
    scores: Vec<f64>,
    labels: Vec<bool>,
    types: Vec<Option<OutlierType>>,
}

impl LabeledScores {
    pub fn new(ids: Vec<u32>, scores: Vec<f64>, labels: Vec<bool>, types: Vec<Option<OutlierType>>) -> Result<Self> {
        let n = ids.len();
        for (what, len) in [("scores", scores.len()), ("labels", labels.len()), ("types", types.len())] {
            if len != n {
                return Err(EvalError::Length { what, expected: n, found: len });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for (&id, s) in ids.iter().zip(&scores) {
            if !seen.insert(id) {
                return Err(EvalError::DuplicateId(id));
            }
            if !s.is_finite() {
                return Err(EvalError::NonFinite(id));
            }
        }
        Ok(Self { ids, scores, labels, types })
    }

    /// Labels follow the types: an image is an outlier iff it has a type.
    pub fn from_types(ids: Vec<u32>, scores: Vec<f64>, types: Vec<Option<OutlierType>>) -> Result<Self> {
        let labels = types.iter().map(Option::is_some).collect();
        Self::new(ids, scores, labels, types)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn types(&self) -> &[Option<OutlierType>] {
        &self.types
    }

    pub fn n_outliers(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Rows at `indices`; repeats are allowed (bootstrap replicates).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            types: indices.iter().map(|&i| self.types[i]).collect(),
        }
    }

    pub fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.len() {
            return Err(EvalError::Length { what: "scores", expected: self.len(), found: scores.len() });
        }
        Ok(Self { scores, ..self.clone() })
    }

    /// Positions sorted ascending by score, then id, then position.
    fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[a].total_cmp(&self.scores[b]).then(self.ids[a].cmp(&self.ids[b])).then(a.cmp(&b))
        });
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    /// 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// 0 when precision + recall is 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::Fraction(fraction))
    }
}

/// Predicts outlier for the `⌈fraction·N⌉` smallest scores.
pub fn confusion_at_fraction(ls: &LabeledScores, fraction: f64) -> Result<Confusion> {
    if ls.is_empty() {
        return Err(EvalError::Empty);
    }
    check_fraction(fraction)?;
    Ok(confusion_from_order(&ls.labels, &ls.order(), selection_count(fraction, ls.len())))
}

fn confusion_from_order(labels: &[bool], order: &[usize], k: usize) -> Confusion {
    let positives = labels.iter().filter(|&&l| l).count();
    let tp = order[..k].iter().filter(|&&i| labels[i]).count();
    let fp = k - tp;
    Confusion { tp, fp, fn_: positives - tp, tn: labels.len() - positives - fp }
}

/// Thresholds at every distinct score, from most to least strict. Each entry
/// is the confusion matrix when all scores ≤ the threshold are flagged.
fn sweep(ls: &LabeledScores) -> Result<Vec<Confusion>> {
    let positives = ls.n_outliers();
    if ls.is_empty() {
        return Err(EvalError::Empty);
    }
    if positives == 0 || positives == ls.len() {
        return Err(EvalError::SingleClass);
    }
    let negatives = ls.len() - positives;
    let order = ls.order();
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if ls.labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&j| ls.scores[j] != ls.scores[i]);
        if last_of_tie {
            out.push(Confusion { tp, fp, fn_: positives - tp, tn: negatives - fp });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// `(fpr, tpr)` starting at (0, 0).
    pub roc: Vec<[f64; 2]>,
    /// `(recall, precision)` in order of increasing recall.
    pub pr: Vec<[f64; 2]>,
}

pub fn pr_roc_curves(ls: &LabeledScores) -> Result<Curves> {
    let sweep = sweep(ls)?;
    let mut roc = vec![[0.0, 0.0]];
    roc.extend(sweep.iter().map(|c| [c.fpr(), c.recall()]));
    let pr = sweep.iter().map(|c| [c.recall(), c.precision()]).collect();
    Ok(Curves { roc, pr })
}

/// Trapezoidal area under the ROC curve.
pub fn auroc(ls: &LabeledScores) -> Result<f64> {
    let roc = pr_roc_curves(ls)?.roc;
    Ok(roc.windows(2).map(|w| (w[1][0] - w[0][0]) * (w[1][1] + w[0][1]) / 2.0).sum())
}

/// Step-wise average precision `Σ (Rᵢ − Rᵢ₋₁)·Pᵢ`.
pub fn auprc(ls: &LabeledScores) -> Result<f64> {
    let mut prev = 0.0;
    let mut area = 0.0;
    for c in sweep(ls)? {
        let r = c.recall();
        area += (r - prev) * c.precision();
        prev = r;
    }
    Ok(area)
}

/// Selection fractions at which precision, recall and F1 are read off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    fractions: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        let ok = !fractions.is_empty()
            && fractions.iter().all(|&f| f > 0.0 && f <= 1.0)
            && fractions.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self { fractions })
        } else {
            Err(EvalError::Grid)
        }
    }

    /// 0.06%–0.2% by 0.02%, to 0.8% by 0.1%, to 12% by 0.2%, to 30% by 2%:
    /// 79 fractions.
    pub fn standard() -> Self {
        // hundredths of a percent
        let mut units: Vec<u32> = (6..=20).step_by(2).collect();
        units.extend((30..=80).step_by(10));
        units.extend((100..=1200).step_by(20));
        units.extend((1400..=3000).step_by(200));
        Self { fractions: units.into_iter().map(|u| u as f64 / 10_000.0).collect() }
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 at every grid fraction.
pub fn grid_confusions(ls: &LabeledScores, grid: &ThresholdGrid) -> Result<Vec<Confusion>> {
    if ls.is_empty() {
        return Err(EvalError::Empty);
    }
    let order = ls.order();
    Ok(grid.fractions.iter().map(|&f| confusion_from_order(&ls.labels, &order, selection_count(f, ls.len()))).collect())
}

/// Each maximum taken independently over the grid.
pub fn max_metrics(ls: &LabeledScores, grid: &ThresholdGrid) -> Result<MaxMetrics> {
    let cs = grid_confusions(ls, grid)?;
    let max = |f: fn(&Confusion) -> f64| cs.iter().map(f).fold(0.0, f64::max);
    Ok(MaxMetrics { precision: max(Confusion::precision), recall: max(Confusion::recall), f1: max(Confusion::f1) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub max_precision: f64,
    pub max_recall: f64,
    pub max_f1: f64,
}

pub fn point_metrics(ls: &LabeledScores, grid: &ThresholdGrid) -> Result<PointMetrics> {
    let m = max_metrics(ls, grid)?;
    Ok(PointMetrics {
        auroc: auroc(ls)?,
        auprc: auprc(ls)?,
        max_precision: m.precision,
        max_recall: m.recall,
        max_f1: m.f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Inliers and each outlier type drawn with replacement separately.
    Stratified,
    /// Every replicate is the original sample.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub n_replicates: usize,
    pub seed: u64,
    pub resampling: Resampling,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self { n_replicates: 20, seed: 0, resampling: Resampling::Stratified }
    }
}

/// Strata in fixed order: inliers, each type, then untyped outliers.
fn strata(labels: &[bool], types: &[Option<OutlierType>]) -> Vec<Vec<usize>> {
    let mut out = vec![(0..labels.len()).filter(|&i| !labels[i]).collect::<Vec<_>>()];
    for t in OutlierType::ALL {
        out.push((0..labels.len()).filter(|&i| labels[i] && types[i] == Some(t)).collect());
    }
    out.push((0..labels.len()).filter(|&i| labels[i] && types[i].is_none()).collect());
    out
}

/// Index lists of each replicate; replicate `r` draws from seed `seed + r`.
pub fn bootstrap_indices(labels: &[bool], types: &[Option<OutlierType>], spec: &BootstrapSpec) -> Vec<Vec<usize>> {
    let strata = strata(labels, types);
    if strata[0].is_empty() {
        log::warn!("bootstrap: no inliers to resample");
    }
    (0..spec.n_replicates)
        .map(|r| match spec.resampling {
            Resampling::Identity => (0..labels.len()).collect(),
            Resampling::Stratified => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(r as u64));
                let mut idx = Vec::with_capacity(labels.len());
                for s in strata.iter().filter(|s| !s.is_empty()) {
                    idx.extend((0..s.len()).map(|_| s[rng.random_range(0..s.len())]));
                }
                idx
            }
        })
        .collect()
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSummary {
    pub fraction: f64,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub auroc: Summary,
    pub auprc: Summary,
    /// Maxima over the grid of the replicate-mean curve; sd at the argmax.
    pub max_precision: Summary,
    pub max_recall: Summary,
    pub max_f1: Summary,
    pub per_fraction: Vec<FractionSummary>,
}

impl BootstrapReport {
    pub fn rows(&self) -> [(&'static str, Summary); 5] {
        [
            ("auroc", self.auroc),
            ("auprc", self.auprc),
            ("max_precision", self.max_precision),
            ("max_recall", self.max_recall),
            ("max_f1", self.max_f1),
        ]
    }
}

struct ReplicateMetrics {
    auroc: f64,
    auprc: f64,
    grid: Vec<Confusion>,
}

/// Bootstrap of a fixed score column.
pub fn bootstrap_metrics(ls: &LabeledScores, spec: &BootstrapSpec, grid: &ThresholdGrid) -> Result<BootstrapReport> {
    bootstrap_metrics_with(ls, spec, grid, &|idx: &[usize]| idx.iter().map(|&i| ls.scores[i]).collect())
}

/// Bootstrap where `rescore` recomputes the score column for each replicate's
/// rows (for ensembles whose normalisation depends on the sample).
pub fn bootstrap_metrics_with(
    ls: &LabeledScores,
    spec: &BootstrapSpec,
    grid: &ThresholdGrid,
    rescore: &(dyn Fn(&[usize]) -> Vec<f64> + Sync),
) -> Result<BootstrapReport> {
    if ls.is_empty() {
        return Err(EvalError::Empty);
    }
    let reps = bootstrap_indices(&ls.labels, &ls.types, spec);
    let metrics: Vec<ReplicateMetrics> = reps
        .par_iter()
        .map(|idx| {
            let rep = ls.select(idx).with_scores(rescore(idx))?;
            Ok(ReplicateMetrics { auroc: auroc(&rep)?, auprc: auprc(&rep)?, grid: grid_confusions(&rep, grid)? })
        })
        .collect::<Result<_>>()?;

    let per_fraction: Vec<FractionSummary> = grid
        .fractions
        .iter()
        .enumerate()
        .map(|(j, &fraction)| {
            let col = |f: fn(&Confusion) -> f64| Summary::of(&metrics.iter().map(|m| f(&m.grid[j])).collect::<Vec<_>>());
            FractionSummary {
                fraction,
                precision: col(Confusion::precision),
                recall: col(Confusion::recall),
                f1: col(Confusion::f1),
            }
        })
        .collect();
    let best = |pick: fn(&FractionSummary) -> Summary| {
        per_fraction.iter().map(pick).fold(Summary { mean: 0.0, sd: 0.0 }, |a, b| if b.mean > a.mean { b } else { a })
    };
    Ok(BootstrapReport {
        auroc: Summary::of(&metrics.iter().map(|m| m.auroc).collect::<Vec<_>>()),
        auprc: Summary::of(&metrics.iter().map(|m| m.auprc).collect::<Vec<_>>()),
        max_precision: best(|f| f.precision),
        max_recall: best(|f| f.recall),
        max_f1: best(|f| f.f1),
        per_fraction,
    })
}

/// Default ratio of one outlier type to the evaluated sample.
pub const PER_TYPE_RATIO: f64 = 0.005;

/// All outliers of `kind` plus a seeded sample of inliers sized so that the
/// type makes up `ratio` of the result. Other outlier types are dropped.
pub fn per_type_subset(ls: &LabeledScores, kind: OutlierType, ratio: f64, seed: u64) -> Result<LabeledScores> {
    let outliers: Vec<usize> = (0..ls.len()).filter(|&i| ls.labels[i] && ls.types[i] == Some(kind)).collect();
    if outliers.is_empty() {
        return Err(EvalError::TypeAbsent(kind));
    }
    let inliers: Vec<usize> = (0..ls.len()).filter(|&i| !ls.labels[i]).collect();
    let want = ((outliers.len() as f64 / ratio).round() as usize).saturating_sub(outliers.len());
    let take = if want > inliers.len() {
        log::warn!("per-type {kind}: {want} inliers wanted, {} available", inliers.len());
        inliers.len()
    } else {
        want
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, inliers.len(), take).into_iter().map(|j| inliers[j]).collect();
    picked.extend(outliers);
    picked.sort_unstable();
    Ok(ls.select(&picked))
}

pub fn per_type_eval(ls: &LabeledScores, kind: OutlierType, grid: &ThresholdGrid, seed: u64) -> Result<PointMetrics> {
    point_metrics(&per_type_subset(ls, kind, PER_TYPE_RATIO, seed)?, grid)
}

/// One method's contribution to a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeMethod {
    pub name: String,
    /// Ascending rank keys per image; `None` never selects the image.
    pub keys: Vec<Option<f64>>,
    pub fraction: f64,
}

impl CascadeMethod {
    /// Smaller is more outlying (CVAE scores, ensembles).
    pub fn ascending(name: &str, scores: &[f64], fraction: f64) -> Self {
        Self { name: name.into(), keys: scores.iter().map(|&s| Some(s)).collect(), fraction }
    }

    /// Larger is more outlying (pixel sums, line counts); `None` is excluded.
    pub fn descending(name: &str, values: &[Option<f64>], fraction: f64) -> Self {
        Self { name: name.into(), keys: values.iter().map(|v| v.map(|x| -x)).collect(), fraction }
    }

    fn select(&self, ids: &[u32], rows: &[usize]) -> Vec<usize> {
        let mut order: Vec<usize> = rows.iter().copied().enumerate().filter(|&(_, r)| self.keys[r].is_some()).map(|(p, _)| p).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (rows[a], rows[b]);
            self.keys[ra].unwrap().total_cmp(&self.keys[rb].unwrap()).then(ids[ra].cmp(&ids[rb])).then(a.cmp(&b))
        });
        order.truncate(selection_count(self.fraction, rows.len()));
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeStage {
    pub name: String,
    /// Recall of this method alone.
    pub alone: f64,
    /// Recall of the union of this and all earlier methods.
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    pub stages: Vec<CascadeStage>,
    pub recall: f64,
    pub union_size: usize,
}

fn cascade_rows(ids: &[u32], reference: &[bool], methods: &[CascadeMethod], rows: &[usize]) -> Result<CascadeResult> {
    let n_ref = rows.iter().filter(|&&r| reference[r]).count();
    if n_ref == 0 {
        return Err(EvalError::NoReference);
    }
    let mut union = vec![false; rows.len()];
    let mut stages = Vec::with_capacity(methods.len());
    for m in methods {
        check_fraction(m.fraction)?;
        let picked = m.select(ids, rows);
        let alone = picked.iter().filter(|&&p| reference[rows[p]]).count();
        for p in picked {
            union[p] = true;
        }
        let hit = (0..rows.len()).filter(|&p| union[p] && reference[rows[p]]).count();
        stages.push(CascadeStage {
            name: m.name.clone(),
            alone: alone as f64 / n_ref as f64,
            cumulative: hit as f64 / n_ref as f64,
        });
    }
    let recall = stages.last().map_or(0.0, |s| s.cumulative);
    Ok(CascadeResult { stages, recall, union_size: union.iter().filter(|&&u| u).count() })
}

fn check_methods(n: usize, methods: &[CascadeMethod]) -> Result<()> {
    for m in methods {
        if m.keys.len() != n || m.keys.iter().all(Option::is_none) {
            return Err(EvalError::MissingRanking(m.name.clone()));
        }
    }
    Ok(())
}

/// Union of per-method top-fraction selections and its recall of the reference set.
pub fn cascade_recall(ids: &[u32], reference: &[bool], methods: &[CascadeMethod]) -> Result<CascadeResult> {
    if reference.len() != ids.len() {
        return Err(EvalError::Length { what: "reference", expected: ids.len(), found: reference.len() });
    }
    check_methods(ids.len(), methods)?;
    cascade_rows(ids, reference, methods, &(0..ids.len()).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub name: String,
    pub alone: Summary,
    pub cumulative: Summary,
}

/// Cascade recall over stratified bootstrap replicates.
pub fn bootstrap_cascade(
    ids: &[u32],
    reference: &[bool],
    types: &[Option<OutlierType>],
    methods: &[CascadeMethod],
    spec: &BootstrapSpec,
) -> Result<Vec<CascadeSummary>> {
    check_methods(ids.len(), methods)?;
    let labels: Vec<bool> = types.iter().map(Option::is_some).collect();
    let reps = bootstrap_indices(&labels, types, spec);
    let results: Vec<CascadeResult> =
        reps.par_iter().map(|rows| cascade_rows(ids, reference, methods, rows)).collect::<Result<_>>()?;
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, m)| CascadeSummary {
            name: m.name.clone(),
            alone: Summary::of(&results.iter().map(|r| r.stages[k].alone).collect::<Vec<_>>()),
            cumulative: Summary::of(&results.iter().map(|r| r.stages[k].cumulative).collect::<Vec<_>>()),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub score_name: String,
    pub split: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
}

pub fn report_rows(score_name: &str, split: &str, report: &BootstrapReport) -> Vec<MetricRow> {
    report
        .rows()
        .into_iter()
        .map(|(metric, s)| MetricRow {
            score_name: score_name.into(),
            split: split.into(),
            metric: metric.into(),
            mean: s.mean,
            sd: s.sd,
        })
        .collect()
}

/// `score_name,split,metric,mean,sd`
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::Output(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub score_name: String,
    pub split: String,
    #[serde(flatten)]
    pub curves: Curves,
}

/// One JSON object per line.
pub fn write_curves_jsonl<W: Write>(mut out: W, records: &[CurveRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| EvalError::Output(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Shuffled copy of `0..n` from `seed`, for splits.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}
