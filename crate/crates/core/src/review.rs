//! Human curation state: a queue of items, an append-only decision/rating
//! log, and the statuses derived from replaying it.

use crate::corpus::{Answerability, QAItem, UnanswerabilityKind, VideoRef};
use crate::judge::RefusalLexicon;
use crate::perturb::AlteredDescription;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("rubric {rubric:?} does not match item {item_id}")]
    RubricMismatch { item_id: String, rubric: Rubric },
    #[error("score {0} outside 0..=5")]
    ScoreOutOfRange(u8),
    #[error("no item has status pass")]
    NothingPassed,
    #[error("duplicate queue item {0}")]
    DuplicateItem(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("log {path} line {line}: {reason}")]
    CorruptLog {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Pending,
    Pass,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rubric {
    Answerable,
    Unanswerable,
}

impl Rubric {
    pub fn for_k(k: Answerability) -> Rubric {
        match k {
            Answerability::Answerable => Rubric::Answerable,
            Answerability::Unanswerable => Rubric::Unanswerable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item: QAItem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altered: Option<AlteredDescription>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_description: Option<String>,
    /// Frames shown to the annotator, evenly sampled from the video.
    pub frames: Vec<String>,
    /// Positions of `frames` in the video's frame list, for `/api/frames/{video_id}/{n}`.
    pub frame_indices: Vec<usize>,
    pub status: ItemStatus,
}

pub const DEFAULT_REVIEW_FRAMES: usize = 8;

/// At most `max` evenly spaced indices into `len` frames.
pub fn sample_frames(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|j| j * len / max).collect()
}

impl ReviewItem {
    pub fn from_qa(item: QAItem) -> Self {
        Self::with_frames(item, DEFAULT_REVIEW_FRAMES)
    }

    pub fn with_frames(item: QAItem, max_frames: usize) -> Self {
        let altered = item.provenance.clone();
        let frame_indices = sample_frames(item.video.frame_uris.len(), max_frames);
        ReviewItem {
            original_description: altered.as_ref().map(|a| a.original().render()),
            frames: frame_indices
                .iter()
                .map(|&i| item.video.frame_uris[i].clone())
                .collect(),
            frame_indices,
            altered,
            item,
            status: ItemStatus::Pending,
        }
    }
}

fn now() -> DateTime<Utc> {
    Utc::now()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub item_id: String,
    pub verdict: Verdict,
    pub annotator: String,
    #[serde(default = "now")]
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub item_id: String,
    pub rubric: Rubric,
    pub score: u8,
    pub annotator: String,
    #[serde(default = "now")]
    pub timestamp: DateTime<Utc>,
    /// Which model's prediction was rated, when several are compared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

/// An annotator-authored unanswerable question over a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub video: VideoRef,
    pub question: String,
    /// Reasoning for why the question cannot be answered.
    pub gt_answer: String,
    pub kind: UnanswerabilityKind,
    pub annotator: String,
    #[serde(default = "now")]
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEvent {
    Decision(Decision),
    Rating(Rating),
    Compose {
        item: QAItem,
        annotator: String,
        timestamp: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMean {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub count: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub pending: usize,
    pub pass: usize,
    pub filtered: usize,
    pub decisions: usize,
    pub ratings: usize,
    pub rating_means: Vec<RatingMean>,
}

/// Majority of per-annotator verdicts; ties go to filtered.
pub fn aggregate(verdicts: impl IntoIterator<Item = Verdict>) -> ItemStatus {
    let (mut pass, mut filtered) = (0usize, 0usize);
    for v in verdicts {
        match v {
            Verdict::Pass => pass += 1,
            Verdict::Filtered => filtered += 1,
        }
    }
    match (pass, filtered) {
        (0, 0) => ItemStatus::Pending,
        (p, f) if p > f => ItemStatus::Pass,
        _ => ItemStatus::Filtered,
    }
}

/// In-memory state derived from the queue and the event log.
#[derive(Debug, Clone, Default)]
pub struct ReviewState {
    queue: Vec<QAItem>,
    index: HashMap<String, usize>,
    verdicts: HashMap<String, BTreeMap<String, Verdict>>,
    ratings: Vec<Rating>,
    decision_count: usize,
    lexicon: RefusalLexicon,
    max_frames: Option<usize>,
}

impl ReviewState {
    pub fn new(queue: Vec<QAItem>) -> Result<Self, ReviewError> {
        let mut s = ReviewState::default();
        for item in queue {
            s.push_item(item)?;
        }
        Ok(s)
    }

    /// Frames per item in served views; defaults to [`DEFAULT_REVIEW_FRAMES`].
    pub fn set_max_frames(&mut self, n: usize) {
        self.max_frames = Some(n.max(1));
    }

    fn push_item(&mut self, item: QAItem) -> Result<(), ReviewError> {
        if self.index.contains_key(&item.id) {
            return Err(ReviewError::DuplicateItem(item.id));
        }
        self.index.insert(item.id.clone(), self.queue.len());
        self.queue.push(item);
        Ok(())
    }

    fn qa(&self, id: &str) -> Result<&QAItem, ReviewError> {
        self.index
            .get(id)
            .map(|&i| &self.queue[i])
            .ok_or_else(|| ReviewError::UnknownItem(id.to_string()))
    }

    /// Check an event against the current state without applying it.
    pub fn validate(&self, e: &LogEvent) -> Result<(), ReviewError> {
        match e {
            LogEvent::Decision(d) => {
                self.qa(&d.item_id)?;
                if d.annotator.trim().is_empty() {
                    return Err(ReviewError::Invalid("annotator is empty".into()));
                }
            }
            LogEvent::Rating(r) => {
                let item = self.qa(&r.item_id)?;
                if r.score > 5 {
                    return Err(ReviewError::ScoreOutOfRange(r.score));
                }
                if Rubric::for_k(item.k) != r.rubric {
                    return Err(ReviewError::RubricMismatch {
                        item_id: r.item_id.clone(),
                        rubric: r.rubric,
                    });
                }
            }
            LogEvent::Compose { item, .. } => {
                if self.index.contains_key(&item.id) {
                    return Err(ReviewError::DuplicateItem(item.id.clone()));
                }
                item.validate(&self.lexicon).map_err(ReviewError::Invalid)?;
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, e: LogEvent) -> Result<(), ReviewError> {
        self.validate(&e)?;
        match e {
            LogEvent::Decision(d) => {
                self.decision_count += 1;
                self.verdicts
                    .entry(d.item_id)
                    .or_default()
                    .insert(d.annotator, d.verdict);
            }
            LogEvent::Rating(r) => self.ratings.push(r),
            LogEvent::Compose { item, .. } => self.push_item(item)?,
        }
        Ok(())
    }

    pub fn status(&self, id: &str) -> Result<ItemStatus, ReviewError> {
        self.qa(id)?;
        Ok(self
            .verdicts
            .get(id)
            .map_or(ItemStatus::Pending, |m| aggregate(m.values().copied())))
    }

    pub fn statuses(&self) -> BTreeMap<String, ItemStatus> {
        self.queue
            .iter()
            .map(|i| (i.id.clone(), self.status(&i.id).expect("queued id")))
            .collect()
    }

    pub fn item(&self, id: &str) -> Result<ReviewItem, ReviewError> {
        let max = self.max_frames.unwrap_or(DEFAULT_REVIEW_FRAMES);
        let mut r = ReviewItem::with_frames(self.qa(id)?.clone(), max);
        r.status = self.status(id)?;
        Ok(r)
    }

    pub fn qa_items(&self) -> &[QAItem] {
        &self.queue
    }

    /// First item in queue order this annotator has not decided.
    pub fn next_item(&self, annotator: &str) -> Option<ReviewItem> {
        self.queue
            .iter()
            .find(|i| {
                self.verdicts
                    .get(&i.id)
                    .is_none_or(|m| !m.contains_key(annotator))
            })
            .map(|i| self.item(&i.id).expect("queued id"))
    }

    pub fn progress(&self) -> Progress {
        let statuses = self.statuses();
        let count = |s: ItemStatus| statuses.values().filter(|&&x| x == s).count();
        let mut sums: BTreeMap<(String, Option<String>), (usize, u64)> = BTreeMap::new();
        for r in &self.ratings {
            let e = sums
                .entry((r.item_id.clone(), r.model.clone()))
                .or_default();
            e.0 += 1;
            e.1 += u64::from(r.score);
        }
        Progress {
            total: self.queue.len(),
            pending: count(ItemStatus::Pending),
            pass: count(ItemStatus::Pass),
            filtered: count(ItemStatus::Filtered),
            decisions: self.decision_count,
            ratings: self.ratings.len(),
            rating_means: sums
                .into_iter()
                .map(|((item_id, model), (n, sum))| RatingMean {
                    item_id,
                    model,
                    count: n,
                    mean: sum as f64 / n as f64,
                })
                .collect(),
        }
    }

    /// Items whose current status is pass, in queue order.
    pub fn curated(&self) -> Vec<QAItem> {
        self.queue
            .iter()
            .filter(|i| self.status(&i.id).ok() == Some(ItemStatus::Pass))
            .cloned()
            .collect()
    }

    pub fn compose_item(&self, req: &ComposeRequest) -> QAItem {
        let id = req
            .id
            .clone()
            .unwrap_or_else(|| format!("compose-{}", self.queue.len()));
        QAItem {
            id,
            video: req.video.clone(),
            question: req.question.clone(),
            gt_answer: req.gt_answer.clone(),
            k: Answerability::Unanswerable,
            unanswerability_kind: Some(req.kind),
            relation_subtype: None,
            provenance: None,
        }
    }
}

pub fn export_curated(state: &ReviewState, out: &Path) -> Result<usize, ReviewError> {
    let items = state.curated();
    if items.is_empty() {
        return Err(ReviewError::NothingPassed);
    }
    crate::jsonl::write_path(out, &items).map_err(|e| ReviewError::Io {
        path: out.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })
}

/// State plus the log file that backs it. Every accepted event is written
/// and synced before the call returns.
pub struct ReviewStore {
    state: ReviewState,
    log_path: PathBuf,
    log: File,
}

impl ReviewStore {
    pub fn open(queue: Vec<QAItem>, log_path: &Path) -> Result<Self, ReviewError> {
        let io = |source| ReviewError::Io {
            path: log_path.display().to_string(),
            source,
        };
        let mut state = ReviewState::new(queue)?;
        if log_path.exists() {
            let f = File::open(log_path).map_err(io)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |reason: String| ReviewError::CorruptLog {
                    path: log_path.display().to_string(),
                    line: i + 1,
                    reason,
                };
                let e: LogEvent =
                    serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                state.apply(e).map_err(|e| corrupt(e.to_string()))?;
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(io)?;
        Ok(ReviewStore {
            state,
            log_path: log_path.to_path_buf(),
            log,
        })
    }

    pub fn state(&self) -> &ReviewState {
        &self.state
    }

    pub fn set_max_frames(&mut self, n: usize) {
        self.state.set_max_frames(n);
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    fn commit(&mut self, e: LogEvent) -> Result<(), ReviewError> {
        self.state.validate(&e)?;
        let io = |source| ReviewError::Io {
            path: self.log_path.display().to_string(),
            source,
        };
        let mut line = serde_json::to_vec(&e).expect("log events serialize");
        line.push(b'\n');
        self.log.write_all(&line).map_err(io)?;
        self.log.sync_data().map_err(io)?;
        self.state.apply(e)
    }

    pub fn submit_decision(&mut self, d: Decision) -> Result<Progress, ReviewError> {
        self.commit(LogEvent::Decision(d))?;
        Ok(self.state.progress())
    }

    pub fn submit_rating(&mut self, r: Rating) -> Result<Progress, ReviewError> {
        self.commit(LogEvent::Rating(r))?;
        Ok(self.state.progress())
    }

    pub fn compose(&mut self, req: ComposeRequest) -> Result<ReviewItem, ReviewError> {
        let item = self.state.compose_item(&req);
        let id = item.id.clone();
        self.commit(LogEvent::Compose {
            item,
            annotator: req.annotator,
            timestamp: req.timestamp,
        })?;
        self.state.item(&id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video() -> VideoRef {
        VideoRef {
            id: "v".into(),
            source_dataset: "s".into(),
            frame_uris: vec!["frames/v/0.jpg".into()],
            duration_s: None,
        }
    }

    fn queue(n: usize) -> Vec<QAItem> {
        (0..n)
            .map(|i| QAItem::answerable(format!("i{i}"), video(), "q?", "a"))
            .collect()
    }

    fn decision(id: &str, v: Verdict, who: &str) -> Decision {
        Decision {
            item_id: id.into(),
            verdict: v,
            annotator: who.into(),
            timestamp: Utc::now(),
            note: None,
        }
    }

    #[test]
    fn next_item_policy() {
        let mut s = ReviewState::new(queue(3)).unwrap();
        assert_eq!(s.next_item("ann").unwrap().item.id, "i0");
        s.apply(LogEvent::Decision(decision("i0", Verdict::Pass, "bob")))
            .unwrap();
        assert_eq!(s.next_item("ann").unwrap().item.id, "i0");
        for i in 0..3 {
            s.apply(LogEvent::Decision(decision(
                &format!("i{i}"),
                Verdict::Pass,
                "ann",
            )))
            .unwrap();
        }
        assert!(s.next_item("ann").is_none());
    }

    #[test]
    fn aggregation_and_errors() {
        let mut s = ReviewState::new(queue(2)).unwrap();
        s.apply(LogEvent::Decision(decision("i0", Verdict::Pass, "a")))
            .unwrap();
        assert_eq!(s.status("i0").unwrap(), ItemStatus::Pass);
        assert_eq!(s.progress().pending, 1);
        s.apply(LogEvent::Decision(decision("i0", Verdict::Filtered, "b")))
            .unwrap();
        assert_eq!(s.status("i0").unwrap(), ItemStatus::Filtered);
        s.apply(LogEvent::Decision(decision("i0", Verdict::Pass, "b")))
            .unwrap();
        assert_eq!(s.status("i0").unwrap(), ItemStatus::Pass);
        assert!(matches!(
            s.apply(LogEvent::Decision(decision("nope", Verdict::Pass, "a"))),
            Err(ReviewError::UnknownItem(_))
        ));
    }

    #[test]
    fn rating_checks() {
        let mut q = queue(1);
        let mut u = QAItem::answerable("u", video(), "q?", "The question is unanswerable.");
        u.k = Answerability::Unanswerable;
        u.unanswerability_kind = Some(UnanswerabilityKind::Object);
        q.push(u);
        let mut s = ReviewState::new(q).unwrap();
        let rating = |id: &str, rubric, score| Rating {
            item_id: id.into(),
            rubric,
            score,
            annotator: "a".into(),
            timestamp: Utc::now(),
            model: None,
        };
        s.apply(LogEvent::Rating(rating("u", Rubric::Unanswerable, 5)))
            .unwrap();
        assert!(matches!(
            s.apply(LogEvent::Rating(rating("u", Rubric::Unanswerable, 7))),
            Err(ReviewError::ScoreOutOfRange(7))
        ));
        assert!(matches!(
            s.apply(LogEvent::Rating(rating("u", Rubric::Answerable, 3))),
            Err(ReviewError::RubricMismatch { .. })
        ));
        assert_eq!(s.progress().rating_means[0].mean, 5.0);
    }

    #[test]
    fn store_replay_and_export() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log.jsonl");
        let mut store = ReviewStore::open(queue(5), &log).unwrap();
        for (i, v) in [
            Verdict::Pass,
            Verdict::Filtered,
            Verdict::Pass,
            Verdict::Pass,
            Verdict::Filtered,
        ]
        .into_iter()
        .enumerate()
        {
            store
                .submit_decision(decision(&format!("i{i}"), v, "a"))
                .unwrap();
        }
        let out = dir.path().join("curated.jsonl");
        assert_eq!(export_curated(store.state(), &out).unwrap(), 3);
        store
            .submit_decision(decision("i0", Verdict::Filtered, "a"))
            .unwrap();
        assert_eq!(export_curated(store.state(), &out).unwrap(), 2);
        let before = store.state().statuses();
        drop(store);
        let reopened = ReviewStore::open(queue(5), &log).unwrap();
        assert_eq!(reopened.state().statuses(), before);
        assert_eq!(reopened.state().progress().decisions, 6);

        let empty = ReviewState::new(queue(2)).unwrap();
        assert!(matches!(
            export_curated(&empty, &out),
            Err(ReviewError::NothingPassed)
        ));
    }

    #[test]
    fn compose_items_persist() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log.jsonl");
        let mut store = ReviewStore::open(queue(1), &log).unwrap();
        let req = ComposeRequest {
            id: None,
            video: video(),
            question: "What is the dog eating?".into(),
            gt_answer: "The question is unanswerable because no dog appears.".into(),
            kind: UnanswerabilityKind::Object,
            annotator: "a".into(),
            timestamp: Utc::now(),
        };
        let item = store.compose(req.clone()).unwrap();
        assert_eq!(item.item.k, Answerability::Unanswerable);
        let mut bad = req;
        bad.gt_answer = "It eats bread.".into();
        assert!(matches!(store.compose(bad), Err(ReviewError::Invalid(_))));
        drop(store);
        let reopened = ReviewStore::open(queue(1), &log).unwrap();
        assert_eq!(reopened.state().qa_items().len(), 2);
    }

    #[test]
    fn frames_are_sampled_evenly() {
        assert_eq!(sample_frames(3, 8), vec![0, 1, 2]);
        assert_eq!(sample_frames(16, 8), vec![0, 2, 4, 6, 8, 10, 12, 14]);
        assert_eq!(sample_frames(10, 4), vec![0, 2, 5, 7]);
        let mut it = queue(1).remove(0);
        it.video.frame_uris = (0..20).map(|i| format!("f{i}.jpg")).collect();
        let mut s = ReviewState::new(vec![it]).unwrap();
        assert_eq!(s.item("i0").unwrap().frames.len(), DEFAULT_REVIEW_FRAMES);
        s.set_max_frames(2);
        let r = s.item("i0").unwrap();
        assert_eq!(
            (r.frames, r.frame_indices),
            (
                vec!["f0.jpg".to_string(), "f10.jpg".to_string()],
                vec![0, 10]
            )
        );
    }
}
