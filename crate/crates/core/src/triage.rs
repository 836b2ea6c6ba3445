//! Iterative human screening: ranked queues, reviewer verdicts and exclusion
//! lists, persisted as an append-only JSON-lines event log.
//!
//! The session is a pure fold over [`Event`]s; [`TriageStore`] adds the
//! durable log and the per-round exclusion files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{rank_indices, ScoreMatrix, ScoringError, N_SCORES};
use crate::taxonomy::{TriageCategory, UnknownType};

pub const LOG_FILE: &str = "labels.jsonl";
pub const EXPORT_HEADER: &str = "image_id,verdict,type,round";

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("no scores loaded for round {0}")]
    NoScores(u32),
    #[error("image {0} is not in the current queue")]
    UnknownImage(u32),
    #[error("round {given} is closed; current round is {current}")]
    ClosedRound { given: u32, current: u32 },
    #[error("round {requested} already advanced; current round is {current}")]
    AlreadyAdvanced { requested: u32, current: u32 },
    #[error("round {0} has no labels; pass force to advance anyway")]
    NothingLabeled(u32),
    #[error("round {0} already has labels; its queue cannot be replaced")]
    QueueLocked(u32),
    #[error("invalid label: {0}")]
    Invalid(String),
    #[error(transparent)]
    Type(#[from] UnknownType),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("session log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("session already exists at {0}")]
    Exists(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TriageError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Outlier,
    Inlier,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Outlier => "outlier",
            Self::Inlier => "inlier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub image_id: u32,
    pub round: u32,
    pub verdict: Verdict,
    #[serde(rename = "type")]
    pub kind: Option<TriageCategory>,
    pub reviewer: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl LabelRecord {
    pub fn validate(&self) -> Result<()> {
        match (self.verdict, self.kind) {
            (Verdict::Inlier, Some(t)) => Err(TriageError::Invalid(format!("inlier verdict cannot carry type {t}"))),
            (Verdict::Outlier, None) => Err(TriageError::Invalid("outlier verdict needs a type".into())),
            _ if self.reviewer.trim().is_empty() => Err(TriageError::Invalid("reviewer is empty".into())),
            _ => Ok(()),
        }
    }
}

/// How a round's candidates are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum QueueMode {
    /// Union of the `top_n` lowest images of each of the 15 columns.
    PerScoreUnion { top_n: usize },
    /// The lowest `⌈fraction · N⌉` images by the average ensemble.
    EnsembleTopFraction { fraction: f64 },
}

/// What the exclusion file of a finished round contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionPolicy {
    /// Only images whose effective verdict is outlier.
    #[default]
    Confirmed,
    /// Every image queued in the round, plus confirmed outliers.
    ReviewedUnion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub image_id: u32,
    pub ensemble: f64,
    pub scores: Vec<f64>,
}

/// Candidates for review ordered by ascending average ensemble, ties by id.
///
/// Excluded images are dropped before normalisation, so they neither appear
/// nor shift the ensemble of the others.
pub fn build_queue(matrix: &ScoreMatrix, mode: QueueMode, excluded: &BTreeSet<u32>) -> Result<Vec<QueueItem>> {
    let keep: Vec<usize> = (0..matrix.len()).filter(|&i| !excluded.contains(&matrix.ids[i])).collect();
    if keep.is_empty() {
        return Err(ScoringError::Empty.into());
    }
    let sub = matrix.subset(&keep).with_ensembles()?;
    let ens = sub.ensemble_avg.clone().expect("ensembles computed");
    let chosen: BTreeSet<usize> = match mode {
        QueueMode::PerScoreUnion { top_n } => {
            if top_n == 0 {
                return Err(TriageError::Invalid("top_n must be positive".into()));
            }
            let mut set = BTreeSet::new();
            for c in 1..=N_SCORES {
                let col = sub.column(c)?;
                let mut order: Vec<usize> = (0..sub.len()).collect();
                order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(sub.ids[a].cmp(&sub.ids[b])));
                set.extend(order.into_iter().take(top_n));
            }
            set
        }
        QueueMode::EnsembleTopFraction { fraction } => rank_indices(&sub.ids, &ens, fraction)?.into_iter().collect(),
    };
    let mut items: Vec<QueueItem> = chosen
        .into_iter()
        .map(|i| QueueItem {
            image_id: sub.ids[i],
            ensemble: ens[i],
            scores: sub.columns().iter().map(|c| c[i]).collect(),
        })
        .collect();
    items.sort_by(|a, b| a.ensemble.total_cmp(&b.ensemble).then(a.image_id.cmp(&b.image_id)));
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { session_id: String, policy: ExclusionPolicy },
    Queue { round: u32, mode: QueueMode, items: Vec<QueueItem> },
    Label(LabelRecord),
    Advance { round: u32, forced: bool, excluded: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub image_id: u32,
    pub verdict: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TriageSession {
    pub session_id: String,
    pub policy: ExclusionPolicy,
    /// Current round, starting at 1.
    pub round: u32,
    pub mode: Option<QueueMode>,
    queue: Vec<QueueItem>,
    queue_index: BTreeMap<u32, usize>,
    history: Vec<LabelRecord>,
    effective: BTreeMap<u32, LabelRecord>,
    removed: BTreeMap<u32, u32>,
}

/// Counts shown by the session endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub round: u32,
    pub policy: ExclusionPolicy,
    pub has_scores: bool,
    pub queue_size: usize,
    pub reviewed: usize,
    pub exclusions: usize,
    pub labels: usize,
}

impl TriageSession {
    pub fn new(session_id: &str, policy: ExclusionPolicy) -> Self {
        let mut s = Self::default();
        s.apply(Event::Created { session_id: session_id.into(), policy }).expect("creation always applies");
        s
    }

    /// Folds a log from an empty state.
    pub fn replay<I: IntoIterator<Item = Event>>(events: I) -> Result<Self> {
        let mut s = Self::default();
        for (i, e) in events.into_iter().enumerate() {
            if (i == 0) != matches!(e, Event::Created { .. }) {
                return Err(TriageError::Log { line: i + 1, message: "session must start with exactly one creation".into() });
            }
            s.apply(e).map_err(|err| TriageError::Log { line: i + 1, message: err.to_string() })?;
        }
        if s.round == 0 {
            return Err(TriageError::Log { line: 0, message: "empty log".into() });
        }
        Ok(s)
    }

    /// Whether `event` would change the session; errors if it is not allowed.
    pub fn check(&self, event: &Event) -> Result<bool> {
        match event {
            Event::Created { .. } => Ok(true),
            Event::Queue { round, .. } => {
                if *round != self.round {
                    return Err(TriageError::ClosedRound { given: *round, current: self.round });
                }
                if self.history.iter().any(|r| r.round == self.round) {
                    return Err(TriageError::QueueLocked(self.round));
                }
                Ok(true)
            }
            Event::Label(rec) => {
                rec.validate()?;
                if rec.round != self.round {
                    return Err(TriageError::ClosedRound { given: rec.round, current: self.round });
                }
                if self.mode.is_none() {
                    return Err(TriageError::NoScores(self.round));
                }
                if !self.queue_index.contains_key(&rec.image_id) {
                    return Err(TriageError::UnknownImage(rec.image_id));
                }
                let repeat = self.effective.get(&rec.image_id).is_some_and(|e| {
                    (e.round, &e.reviewer, e.verdict, e.kind) == (rec.round, &rec.reviewer, rec.verdict, rec.kind)
                });
                Ok(!repeat)
            }
            Event::Advance { round, forced, .. } => {
                if *round != self.round {
                    return Err(TriageError::AlreadyAdvanced { requested: *round, current: self.round });
                }
                if !forced && !self.history.iter().any(|r| r.round == self.round) {
                    return Err(TriageError::NothingLabeled(self.round));
                }
                Ok(true)
            }
        }
    }

    /// Applies one event. A label repeating the effective record's
    /// (image, round, reviewer) key with the same verdict and type is a no-op.
    pub fn apply(&mut self, event: Event) -> Result<bool> {
        if !self.check(&event)? {
            return Ok(false);
        }
        match event {
            Event::Created { session_id, policy } => {
                if self.round != 0 {
                    return Err(TriageError::Invalid("session already created".into()));
                }
                self.session_id = session_id;
                self.policy = policy;
                self.round = 1;
            }
            Event::Queue { mode, items, .. } => {
                self.queue_index = items.iter().enumerate().map(|(i, q)| (q.image_id, i)).collect();
                if self.queue_index.len() != items.len() {
                    return Err(TriageError::Invalid("queue lists an image twice".into()));
                }
                self.mode = Some(mode);
                self.queue = items;
            }
            Event::Label(rec) => {
                self.effective.insert(rec.image_id, rec.clone());
                self.history.push(rec);
            }
            Event::Advance { round, excluded, .. } => {
                for id in excluded {
                    self.removed.entry(id).or_insert(round);
                }
                self.round += 1;
                self.mode = None;
                self.queue.clear();
                self.queue_index.clear();
            }
        }
        Ok(true)
    }

    pub fn queue(&self) -> &[QueueItem] {
        &self.queue
    }

    pub fn queue_item(&self, image_id: u32) -> Option<&QueueItem> {
        self.queue_index.get(&image_id).map(|&i| &self.queue[i])
    }

    pub fn history(&self) -> &[LabelRecord] {
        &self.history
    }

    pub fn effective_label(&self, image_id: u32) -> Option<&LabelRecord> {
        self.effective.get(&image_id)
    }

    /// Images whose latest verdict is outlier.
    pub fn confirmed(&self) -> BTreeSet<u32> {
        self.effective.values().filter(|r| r.verdict == Verdict::Outlier).map(|r| r.image_id).collect()
    }

    /// Everything kept out of future queues: earlier rounds' exclusion files
    /// plus current confirmations.
    pub fn exclusions(&self) -> BTreeSet<u32> {
        let mut out = self.confirmed();
        out.extend(self.removed.keys());
        out
    }

    /// The exclusion file the current round would emit if advanced now.
    pub fn pending_exclusions(&self) -> Vec<u32> {
        let mut out = self.exclusions();
        if self.policy == ExclusionPolicy::ReviewedUnion {
            out.extend(self.queue.iter().map(|q| q.image_id));
        }
        out.into_iter().collect()
    }

    pub fn reviewed_in_round(&self) -> usize {
        self.queue.iter().filter(|q| self.effective.get(&q.image_id).is_some_and(|r| r.round == self.round)).count()
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.session_id.clone(),
            round: self.round,
            policy: self.policy,
            has_scores: self.mode.is_some(),
            queue_size: self.queue.len(),
            reviewed: self.reviewed_in_round(),
            exclusions: self.exclusions().len(),
            labels: self.history.len(),
        }
    }

    /// One row per excluded image, ordered by id. Confirmed images carry
    /// their effective label; union-only removals carry `reviewed`.
    pub fn export_rows(&self, ids: &[u32]) -> Vec<ExportRow> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .map(|id| match self.effective.get(&id).filter(|r| r.verdict == Verdict::Outlier) {
                Some(r) => ExportRow {
                    image_id: id,
                    verdict: r.verdict.as_str().into(),
                    kind: r.kind.map_or_else(String::new, |k| k.as_str().into()),
                    round: r.round,
                },
                None => ExportRow {
                    image_id: id,
                    verdict: "reviewed".into(),
                    kind: String::new(),
                    round: self.removed.get(&id).copied().unwrap_or(self.round),
                },
            })
            .collect()
    }

    /// CSV `image_id,verdict,type,round` of [`TriageSession::exclusions`].
    pub fn export_csv(&self) -> String {
        let ids: Vec<u32> = self.exclusions().into_iter().collect();
        rows_to_csv(&self.export_rows(&ids))
    }
}

fn rows_to_csv(rows: &[ExportRow]) -> String {
    let mut out = String::from(EXPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.image_id, r.verdict, r.kind, r.round));
    }
    out
}

/// Parses an exclusion file into image ids.
pub fn read_exclusions(path: &Path) -> Result<BTreeSet<u32>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TriageError::Invalid(format!("{}: {e}", path.display())))?;
    let mut out = BTreeSet::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| TriageError::Invalid(format!("{}: {e}", path.display())))?;
        let id = rec.get(0).unwrap_or_default();
        out.insert(id.parse().map_err(|_| TriageError::Invalid(format!("{}: bad image id {id:?}", path.display())))?);
    }
    Ok(out)
}

pub fn exclusion_file_name(round: u32) -> String {
    format!("exclusions-round-{round}.csv")
}

/// Reads every event of a log file.
pub fn read_log(path: &Path) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TriageError::Log { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceOutcome {
    pub closed_round: u32,
    pub round: u32,
    pub excluded: Vec<u32>,
    pub exclusion_file: PathBuf,
}

/// A session plus its durable log. Every accepted event is written and
/// synced before it is applied in memory.
#[derive(Debug)]
pub struct TriageStore {
    dir: PathBuf,
    log: File,
    session: TriageSession,
}

impl TriageStore {
    pub fn create(dir: &Path, session_id: &str, policy: ExclusionPolicy) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        if path.exists() {
            return Err(TriageError::Exists(path));
        }
        let log = OpenOptions::new().create_new(true).append(true).open(&path)?;
        let mut store = Self { dir: dir.to_path_buf(), log, session: TriageSession::default() };
        store.commit(Event::Created { session_id: session_id.into(), policy })?;
        Ok(store)
    }

    /// Replays an existing log.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(LOG_FILE);
        let session = TriageSession::replay(read_log(&path)?)?;
        let log = OpenOptions::new().append(true).open(&path)?;
        Ok(Self { dir: dir.to_path_buf(), log, session })
    }

    pub fn open_or_create(dir: &Path, session_id: &str, policy: ExclusionPolicy) -> Result<Self> {
        if dir.join(LOG_FILE).exists() {
            Self::open(dir)
        } else {
            Self::create(dir, session_id, policy)
        }
    }

    pub fn session(&self) -> &TriageSession {
        &self.session
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn commit(&mut self, event: Event) -> Result<bool> {
        if !self.session.check(&event)? {
            return Ok(false);
        }
        let mut line = serde_json::to_string(&event)?;
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.sync_data()?;
        self.session.apply(event)
    }

    /// Builds and stores the current round's queue, skipping exclusions.
    pub fn load_scores(&mut self, matrix: &ScoreMatrix, mode: QueueMode) -> Result<usize> {
        let items = build_queue(matrix, mode, &self.session.exclusions())?;
        let n = items.len();
        self.commit(Event::Queue { round: self.session.round, mode, items })?;
        Ok(n)
    }

    /// Returns whether the record changed anything.
    pub fn record_label(&mut self, record: LabelRecord) -> Result<bool> {
        self.commit(Event::Label(record))
    }

    /// Closes `round` (the current one) and writes its exclusion file.
    pub fn advance_round(&mut self, round: u32, force: bool) -> Result<AdvanceOutcome> {
        self.session.check(&Event::Advance { round, forced: force, excluded: Vec::new() })?;
        let excluded = self.session.pending_exclusions();
        let rows = self.session.export_rows(&excluded);
        let file = self.dir.join(exclusion_file_name(round));
        std::fs::write(&file, rows_to_csv(&rows))?;
        self.commit(Event::Advance { round, forced: force, excluded: excluded.clone() })?;
        Ok(AdvanceOutcome { closed_round: round, round: self.session.round, excluded, exclusion_file: file })
    }
}
