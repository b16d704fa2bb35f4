//! Append-only NDJSON event log and the index derived from it.
//!
//! Every state change is an [`Event`]. The writer validates the event against
//! the current index, appends it to the log, flushes, and only then applies
//! it, so a failed validation or write leaves no trace. Opening a store
//! replays the log through the same `apply`.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use pbm_core::detection::AnnotationRecord;
use pbm_core::eval::Label;
use pbm_core::matching::ComparisonResult;
use pbm_core::trials::{Decision, TrialRecord, TrialStep};
use serde::{Deserialize, Serialize};

use crate::error::{io, Result, ServiceError};

/// Files describing one side of a pair, relative to the asset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideAssets {
    pub image: String,
    pub mask: String,
    pub detections: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideInfo {
    pub assets: SideAssets,
    pub subject_id: String,
    pub eye: String,
    pub pmi_hours: f64,
}

impl SideInfo {
    /// Identity of the eye; two sides are genuine when these agree.
    pub fn eye_key(&self) -> String {
        format!("{}_{}", self.subject_id, self.eye)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub a: SideInfo,
    pub b: SideInfo,
}

impl PairRecord {
    pub fn label(&self) -> Label {
        if self.a.eye_key() == self.b.eye_key() {
            Label::Genuine
        } else {
            Label::Impostor
        }
    }

    pub fn min_pmi_hours(&self) -> f64 {
        self.a.pmi_hours.min(self.b.pmi_hours)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub annotator_id: String,
    pub seed: u64,
    pub pair_ids: Vec<String>,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Agree,
    Disagree,
}

/// An examiner's judgement of machine evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub pair_id: String,
    pub config_hash: String,
    pub annotator_id: String,
    /// Index into the result's pairs, or `None` for the whole comparison.
    pub match_index: Option<usize>,
    pub verdict: Verdict,
    #[serde(default)]
    pub comment: String,
    pub created_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    PairRegistered {
        pair: PairRecord,
    },
    TrialsPlanned {
        plan: TrialPlan,
        trials: Vec<TrialRecord>,
    },
    VerificationAssigned {
        trial: TrialRecord,
    },
    DecisionSubmitted {
        trial_id: String,
        decision: Decision,
        annotations: Vec<AnnotationRecord>,
    },
    ComparisonStored {
        pair_id: String,
        config_hash: String,
        result: Box<ComparisonResult>,
    },
    ReviewRecorded {
        review: ReviewRecord,
    },
}

/// One log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at_ms: u64,
    pub event: Event,
}

/// State derived from the log. All maps are ordered so the serialized form
/// is canonical.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub next_seq: u64,
    pub pairs: BTreeMap<String, PairRecord>,
    pub plans: BTreeMap<String, TrialPlan>,
    pub trials: BTreeMap<String, TrialRecord>,
    /// Completed evaluation trials in completion order.
    pub completed_evaluations: Vec<String>,
    /// Evaluation trial id → the verification trial that claimed it.
    pub verifications: BTreeMap<String, String>,
    /// pair id → config hash → result.
    pub comparisons: BTreeMap<String, BTreeMap<String, ComparisonResult>>,
    pub reviews: BTreeMap<String, Vec<ReviewRecord>>,
}

impl Index {
    pub fn trial_id_for(seq: u64, k: usize) -> String {
        format!("t{seq:06}-{k:02}")
    }

    /// Completed evaluation trials not yet claimed for verification, oldest
    /// first, excluding those the given annotator performed.
    pub fn verification_backlog<'a>(&'a self, annotator_id: &'a str) -> impl Iterator<Item = &'a TrialRecord> + 'a {
        self.completed_evaluations
            .iter()
            .filter(|id| !self.verifications.contains_key(*id))
            .filter_map(|id| self.trials.get(id))
            .filter(move |t| t.annotator_id != annotator_id)
    }

    pub fn open_trial(&self, annotator_id: &str, step: TrialStep) -> Option<&TrialRecord> {
        match step {
            TrialStep::Evaluation => {
                let plan = self.plans.get(annotator_id)?;
                self.trials
                    .values()
                    .filter(|t| t.step == step && t.annotator_id == annotator_id && t.is_open())
                    .min_by_key(|t| plan.pair_ids.iter().position(|p| *p == t.pair_id))
            }
            TrialStep::Verification => self
                .trials
                .values()
                .find(|t| t.step == step && t.annotator_id == annotator_id && t.is_open()),
        }
    }

    fn check(&self, entry: &LogEntry) -> Result<()> {
        if entry.seq != self.next_seq {
            return Err(ServiceError::Conflict(format!(
                "expected sequence {}, got {}",
                self.next_seq, entry.seq
            )));
        }
        match &entry.event {
            Event::PairRegistered { pair } => {
                if self.pairs.contains_key(&pair.pair_id) {
                    return Err(ServiceError::Conflict(format!("pair {} already registered", pair.pair_id)));
                }
            }
            Event::TrialsPlanned { plan, trials } => {
                if self.plans.contains_key(&plan.annotator_id) {
                    return Err(ServiceError::Conflict(format!("{} already has a plan", plan.annotator_id)));
                }
                for t in trials {
                    if self.trials.contains_key(&t.trial_id) {
                        return Err(ServiceError::Conflict(format!("trial {} exists", t.trial_id)));
                    }
                    if !self.pairs.contains_key(&t.pair_id) {
                        return Err(ServiceError::NotFound(format!("pair {}", t.pair_id)));
                    }
                    if t.step != TrialStep::Evaluation || t.prior_trial.is_some() {
                        return Err(ServiceError::Invalid("planned trials are evaluation trials".into()));
                    }
                }
            }
            Event::VerificationAssigned { trial } => {
                if self.trials.contains_key(&trial.trial_id) {
                    return Err(ServiceError::Conflict(format!("trial {} exists", trial.trial_id)));
                }
                let prior_id = trial
                    .prior_trial
                    .as_deref()
                    .ok_or_else(|| ServiceError::Invalid("verification trial without prior".into()))?;
                let prior = self
                    .trials
                    .get(prior_id)
                    .ok_or_else(|| ServiceError::NotFound(format!("trial {prior_id}")))?;
                if prior.step != TrialStep::Evaluation || prior.is_open() {
                    return Err(ServiceError::Invalid(format!("{prior_id} is not a completed evaluation")));
                }
                if self.verifications.contains_key(prior_id) {
                    return Err(ServiceError::Conflict(format!("{prior_id} already claimed")));
                }
                if prior.annotator_id == trial.annotator_id {
                    return Err(ServiceError::Invalid("annotators cannot verify their own trial".into()));
                }
            }
            Event::DecisionSubmitted {
                trial_id,
                decision,
                annotations,
            } => {
                let trial = self
                    .trials
                    .get(trial_id)
                    .ok_or_else(|| ServiceError::NotFound(format!("trial {trial_id}")))?;
                if !trial.is_open() {
                    return Err(ServiceError::Conflict(format!("trial {trial_id} is already closed")));
                }
                pbm_core::trials::validate_submission(*decision, annotations)?;
            }
            Event::ComparisonStored { pair_id, config_hash, .. } => {
                if !self.pairs.contains_key(pair_id) {
                    return Err(ServiceError::NotFound(format!("pair {pair_id}")));
                }
                if self.comparisons.get(pair_id).is_some_and(|m| m.contains_key(config_hash)) {
                    return Err(ServiceError::Conflict(format!("result for {pair_id} exists")));
                }
            }
            Event::ReviewRecorded { review } => {
                let result = self
                    .comparisons
                    .get(&review.pair_id)
                    .and_then(|m| m.get(&review.config_hash))
                    .ok_or_else(|| ServiceError::NotFound(format!("result for {}", review.pair_id)))?;
                if let Some(i) = review.match_index {
                    if i >= result.pairs.len() {
                        return Err(ServiceError::Invalid(format!("match index {i} out of range")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Validates and applies one entry; on error the index is unchanged.
    pub fn apply(&mut self, entry: LogEntry) -> Result<()> {
        self.check(&entry)?;
        self.next_seq += 1;
        match entry.event {
            Event::PairRegistered { pair } => {
                self.pairs.insert(pair.pair_id.clone(), pair);
            }
            Event::TrialsPlanned { plan, trials } => {
                self.plans.insert(plan.annotator_id.clone(), plan);
                for t in trials {
                    self.trials.insert(t.trial_id.clone(), t);
                }
            }
            Event::VerificationAssigned { trial } => {
                let prior = trial.prior_trial.clone().expect("checked");
                self.verifications.insert(prior, trial.trial_id.clone());
                self.trials.insert(trial.trial_id.clone(), trial);
            }
            Event::DecisionSubmitted {
                trial_id,
                decision,
                annotations,
            } => {
                let trial = self.trials.get_mut(&trial_id).expect("checked");
                trial.decision = Some(decision);
                trial.annotations = annotations;
                trial.completed_ms = Some(entry.at_ms);
                if trial.step == TrialStep::Evaluation {
                    self.completed_evaluations.push(trial_id);
                }
            }
            Event::ComparisonStored {
                pair_id,
                config_hash,
                result,
            } => {
                self.comparisons.entry(pair_id).or_default().insert(config_hash, *result);
            }
            Event::ReviewRecorded { review } => {
                self.reviews.entry(review.pair_id.clone()).or_default().push(review);
            }
        }
        Ok(())
    }

    /// Canonical serialized form, used to compare replayed state.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Deterministic clock for tests: every reading advances by one second.
#[derive(Default)]
pub struct StepClock(std::sync::atomic::AtomicU64);

impl Clock for StepClock {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1000, std::sync::atomic::Ordering::SeqCst)
    }
}

pub struct Store {
    path: Option<PathBuf>,
    index: RwLock<Index>,
    writer: Mutex<Option<BufWriter<File>>>,
    clock: Box<dyn Clock>,
}

impl Store {
    pub fn in_memory(clock: Box<dyn Clock>) -> Self {
        Self {
            path: None,
            index: RwLock::new(Index::default()),
            writer: Mutex::new(None),
            clock,
        }
    }

    /// Opens (or creates) a log file and replays it.
    pub fn open(path: impl AsRef<Path>, clock: Box<dyn Clock>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let index = replay(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io(&path, e))?;
        Ok(Self {
            path: Some(path),
            index: RwLock::new(index),
            writer: Mutex::new(Some(BufWriter::new(file))),
            clock,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn read<T>(&self, f: impl FnOnce(&Index) -> T) -> T {
        f(&self.index.read().expect("index lock"))
    }

    /// Single-writer commit: `build` inspects the current index and returns
    /// the event to append (or an error, leaving everything untouched).
    pub fn commit<T>(&self, build: impl FnOnce(&Index, u64) -> Result<(Event, T)>) -> Result<T> {
        let mut writer = self.writer.lock().expect("writer lock");
        let mut index = self.index.write().expect("index lock");
        let at_ms = self.clock.now_ms();
        let (event, out) = build(&index, at_ms)?;
        let entry = LogEntry {
            seq: index.next_seq,
            at_ms,
            event,
        };
        index.check(&entry)?;
        if let Some(w) = writer.as_mut() {
            let path = self.path.clone().unwrap_or_default();
            let line = serde_json::to_string(&entry)?;
            w.write_all(line.as_bytes()).map_err(|e| io(&path, e))?;
            w.write_all(b"\n").map_err(|e| io(&path, e))?;
            w.flush().map_err(|e| io(&path, e))?;
        }
        index.apply(entry)?;
        Ok(out)
    }

    pub fn snapshot(&self) -> Index {
        self.read(Index::clone)
    }
}

/// Rebuilds the index from a log file; a missing file is an empty log.
pub fn replay(path: &Path) -> Result<Index> {
    let mut index = Index::default();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(index),
        Err(e) => return Err(io(path, e)),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry = serde_json::from_str(&line).map_err(|e| ServiceError::CorruptLog {
            line: i + 1,
            reason: e.to_string(),
        })?;
        index.apply(entry).map_err(|e| ServiceError::CorruptLog {
            line: i + 1,
            reason: e.to_string(),
        })?;
    }
    Ok(index)
}
