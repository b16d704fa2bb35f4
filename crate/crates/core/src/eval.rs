//! Score sets and verification metrics (ROC, AUC, EER, d'), plus the
//! accuracy statistics of human comparison trials.
//!
//! Scores are dissimilarities: a comparison is accepted as a match when its
//! score falls below the threshold.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PbmError, Result};
use crate::trials::{Decision, TrialRecord, TrialStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Impostor,
}

/// One scored comparison. Subject ids identify an eye, so a pair is genuine
/// exactly when both ids are equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub pair_id: String,
    pub subject_a: String,
    pub subject_b: String,
    pub score: f64,
    pub label: Label,
    pub no_evidence: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    records: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn new(records: Vec<ScoreRecord>) -> Result<Self> {
        for r in &records {
            if !r.score.is_finite() {
                return Err(PbmError::ScoreSet(format!("non-finite score for {}", r.pair_id)));
            }
            let same = r.subject_a == r.subject_b;
            if same != (r.label == Label::Genuine) {
                return Err(PbmError::ScoreSet(format!(
                    "label {:?} of {} disagrees with subjects {} / {}",
                    r.label, r.pair_id, r.subject_a, r.subject_b
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn scores(&self, label: Label) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.score)
            .collect()
    }

    pub fn without_no_evidence(&self) -> Self {
        Self {
            records: self.records.iter().filter(|r| !r.no_evidence).cloned().collect(),
        }
    }

    /// Reads the score CSV (`pair_id,subject_a,subject_b,score,label,no_evidence`).
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| PbmError::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn read_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let records = rdr.deserialize().collect::<std::result::Result<Vec<ScoreRecord>, _>>()?;
        Self::new(records)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| PbmError::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| PbmError::io(path, e))?;
        self.write_csv(file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub false_accepts: usize,
    pub false_rejects: usize,
}

/// Operating points ordered from the loosest threshold (+∞: everything
/// accepted, far 1, frr 0) to the tightest (−∞: far 0, frr 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,far,frr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
        }
        out
    }
}

/// Sweeps thresholds at +∞, every midpoint between consecutive distinct
/// scores, and −∞. A comparison is accepted when `score < threshold`.
pub fn roc(set: &ScoreSet) -> Result<RocCurve> {
    let mut genuine = set.scores(Label::Genuine);
    let mut impostor = set.scores(Label::Impostor);
    if genuine.is_empty() || impostor.is_empty() {
        return Err(PbmError::ScoreSet(
            "ROC needs at least one genuine and one impostor score".into(),
        ));
    }
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut thresholds = vec![f64::INFINITY];
    thresholds.extend(distinct.windows(2).rev().map(|w| w[0] + (w[1] - w[0]) / 2.0));
    thresholds.push(f64::NEG_INFINITY);

    let (ng, ni) = (genuine.len(), impostor.len());
    let points = thresholds
        .into_iter()
        .map(|t| {
            let accepted_impostors = impostor.partition_point(|&s| s < t);
            let accepted_genuine = genuine.partition_point(|&s| s < t);
            let false_rejects = ng - accepted_genuine;
            RocPoint {
                threshold: t,
                far: accepted_impostors as f64 / ni as f64,
                frr: false_rejects as f64 / ng as f64,
                false_accepts: accepted_impostors,
                false_rejects,
            }
        })
        .collect();
    Ok(RocCurve {
        points,
        n_genuine: ng,
        n_impostor: ni,
    })
}

/// Trapezoidal area under true-accept rate (1 − frr) against far. The sum
/// is accumulated over integer counts and divided once.
pub fn auc(curve: &RocCurve) -> f64 {
    let ng = curve.n_genuine as u128;
    let twice: u128 = curve
        .points
        .windows(2)
        .map(|w| {
            let (p, q) = (&w[0], &w[1]);
            let dfa = (p.false_accepts - q.false_accepts) as u128;
            dfa * (2 * ng - p.false_rejects as u128 - q.false_rejects as u128)
        })
        .sum();
    twice as f64 / (2 * ng * curve.n_impostor as u128) as f64
}

/// far at the point where far = frr, interpolated linearly between the two
/// operating points that bracket the crossing.
pub fn eer(curve: &RocCurve) -> f64 {
    for w in curve.points.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        let (dp, dq) = (p.far - p.frr, q.far - q.frr);
        if dp == 0.0 {
            return p.far;
        }
        if dp > 0.0 && dq <= 0.0 {
            let t = dp / (dp - dq);
            return p.far + t * (q.far - p.far);
        }
    }
    curve.points.last().map(|p| p.far).unwrap_or(0.0)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Decidability index: |μ_impostor − μ_genuine| / sqrt((σ²_g + σ²_i) / 2)
/// with sample means and unbiased sample variances.
pub fn dprime(set: &ScoreSet) -> Result<f64> {
    let genuine = set.scores(Label::Genuine);
    let impostor = set.scores(Label::Impostor);
    if genuine.len() < 2 || impostor.len() < 2 {
        return Err(PbmError::ClassTooSmall(format!(
            "d' needs two scores per class, got {} genuine / {} impostor",
            genuine.len(),
            impostor.len()
        )));
    }
    let (mg, vg) = mean_var(&genuine);
    let (mi, vi) = mean_var(&impostor);
    let pooled = ((vg + vi) / 2.0).sqrt();
    let gap = (mi - mg).abs();
    if pooled == 0.0 {
        return Ok(if gap == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(gap / pooled)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub n_no_evidence: usize,
    pub auc: f64,
    pub eer: f64,
    pub dprime: Option<f64>,
}

pub fn evaluate(set: &ScoreSet) -> Result<(Metrics, RocCurve)> {
    let curve = roc(set)?;
    let metrics = Metrics {
        n_genuine: curve.n_genuine,
        n_impostor: curve.n_impostor,
        n_no_evidence: set.records.iter().filter(|r| r.no_evidence).count(),
        auc: auc(&curve),
        eer: eer(&curve),
        dprime: dprime(set).ok(),
    };
    Ok((metrics, curve))
}

/// How comparison pairs are drawn from a sample collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingProtocol {
    /// Every unordered pair of distinct images.
    AllVsAll,
    /// Unordered pairs whose images come from different capture sessions.
    CrossSession,
}

impl fmt::Display for PairingProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairingProtocol::AllVsAll => "all-vs-all",
            PairingProtocol::CrossSession => "cross-session",
        })
    }
}

/// Index pairs `(i, j)`, `i < j`, selected by `protocol`. `sessions[i]` is
/// the capture session of sample `i`.
pub fn generate_pairs<S: PartialEq>(sessions: &[S], protocol: PairingProtocol) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..sessions.len() {
        for j in i + 1..sessions.len() {
            if protocol == PairingProtocol::AllVsAll || sessions[i] != sessions[j] {
                out.push((i, j));
            }
        }
    }
    out
}

/// One column of the human accuracy table, fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct AccuracyColumn {
    pub n_trials: usize,
    pub overall: f64,
    pub genuine: f64,
    pub impostor: f64,
    pub inconclusive: f64,
    pub n_annotators: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HumanAccuracyTable {
    pub evaluation: AccuracyColumn,
    pub verification: AccuracyColumn,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Accuracy over completed trials of one step. "Don't know" counts as
/// inconclusive and never as correct.
pub fn accuracy_column(trials: &[TrialRecord], step: TrialStep) -> AccuracyColumn {
    let done: Vec<(&TrialRecord, Decision)> = trials
        .iter()
        .filter(|t| t.step == step)
        .filter_map(|t| t.decision.map(|d| (t, d)))
        .collect();
    let correct = |label: Option<Label>| {
        done.iter()
            .filter(|(t, d)| label.is_none_or(|l| t.truth == l) && d.is_correct(t.truth))
            .count()
    };
    let of_label = |label: Label| done.iter().filter(|(t, _)| t.truth == label).count();
    let annotators: BTreeSet<&str> = done.iter().map(|(t, _)| t.annotator_id.as_str()).collect();
    AccuracyColumn {
        n_trials: done.len(),
        overall: ratio(correct(None), done.len()),
        genuine: ratio(correct(Some(Label::Genuine)), of_label(Label::Genuine)),
        impostor: ratio(correct(Some(Label::Impostor)), of_label(Label::Impostor)),
        inconclusive: ratio(
            done.iter().filter(|(_, d)| *d == Decision::DontKnow).count(),
            done.len(),
        ),
        n_annotators: annotators.len(),
    }
}

pub fn human_accuracy_stats(trials: &[TrialRecord]) -> HumanAccuracyTable {
    HumanAccuracyTable {
        evaluation: accuracy_column(trials, TrialStep::Evaluation),
        verification: accuracy_column(trials, TrialStep::Verification),
    }
}

impl fmt::Display for HumanAccuracyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: f64| format!("{:.1}%", v * 100.0);
        let (e, v) = (&self.evaluation, &self.verification);
        writeln!(f, "{:<22}{:>14}{:>16}", "", "Step 1", "Step 2")?;
        writeln!(f, "{:<22}{:>14}{:>16}", "", "(evaluation)", "(verification)")?;
        for (name, a, b) in [
            ("Overall", e.overall, v.overall),
            ("Genuine pairs", e.genuine, v.genuine),
            ("Impostor pairs", e.impostor, v.impostor),
            ("Inconclusive", e.inconclusive, v.inconclusive),
        ] {
            writeln!(f, "{:<22}{:>14}{:>16}", name, pct(a), pct(b))?;
        }
        writeln!(
            f,
            "{:<22}{:>14}{:>16}",
            "Number of annotators", e.n_annotators, v.n_annotators
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ChangeCounts {
    pub incorrect_to_correct: usize,
    pub correct_to_incorrect: usize,
}

/// Decisions changed by verification annotators relative to the trial they
/// verified. "Genuine" and "impostor" name the decisions same-eye and
/// different-eyes; "unsure" is "don't know".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DecisionChangeTable {
    pub genuine_to_impostor: ChangeCounts,
    pub impostor_to_genuine: ChangeCounts,
    pub unsure_to_genuine: ChangeCounts,
    pub unsure_to_impostor: ChangeCounts,
    pub genuine_to_unsure: ChangeCounts,
    pub impostor_to_unsure: ChangeCounts,
    /// Changes that stay incorrect (e.g. unsure to a wrong decision).
    pub incorrect_to_incorrect: usize,
    pub unchanged: usize,
}

pub fn decision_change_stats(trials: &[TrialRecord]) -> DecisionChangeTable {
    let by_id: HashMap<&str, &TrialRecord> = trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();
    let mut table = DecisionChangeTable::default();
    for t in trials.iter().filter(|t| t.step == TrialStep::Verification) {
        let Some(now) = t.decision else { continue };
        let Some(before) = t
            .prior_trial
            .as_deref()
            .and_then(|id| by_id.get(id))
            .and_then(|p| p.decision)
        else {
            continue;
        };
        if before == now {
            table.unchanged += 1;
            continue;
        }
        let (was, is) = (before.is_correct(t.truth), now.is_correct(t.truth));
        use Decision::*;
        let row = match (before, now) {
            (SameEye, DifferentEyes) => &mut table.genuine_to_impostor,
            (DifferentEyes, SameEye) => &mut table.impostor_to_genuine,
            (DontKnow, SameEye) => &mut table.unsure_to_genuine,
            (DontKnow, DifferentEyes) => &mut table.unsure_to_impostor,
            (SameEye, DontKnow) => &mut table.genuine_to_unsure,
            (DifferentEyes, DontKnow) => &mut table.impostor_to_unsure,
            _ => unreachable!("equal decisions handled above"),
        };
        match (was, is) {
            (false, true) => row.incorrect_to_correct += 1,
            (true, false) => row.correct_to_incorrect += 1,
            _ => table.incorrect_to_incorrect += 1,
        }
    }
    table
}

impl fmt::Display for DecisionChangeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22}{:>14}{:>14}", "", "Incorrect", "Correct")?;
        writeln!(f, "{:<22}{:>14}{:>14}", "", "to Correct", "to Incorrect")?;
        let cell = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |n| n.to_string());
        let rows = [
            ("Genuine to Impostor", Some(self.genuine_to_impostor.incorrect_to_correct), Some(self.genuine_to_impostor.correct_to_incorrect)),
            ("Impostor to Genuine", Some(self.impostor_to_genuine.incorrect_to_correct), Some(self.impostor_to_genuine.correct_to_incorrect)),
            ("Unsure to Genuine", Some(self.unsure_to_genuine.incorrect_to_correct), None),
            ("Unsure to Impostor", Some(self.unsure_to_impostor.incorrect_to_correct), None),
            ("Genuine to Unsure", None, Some(self.genuine_to_unsure.correct_to_incorrect)),
            ("Impostor to Unsure", None, Some(self.impostor_to_unsure.correct_to_incorrect)),
        ];
        for (name, a, b) in rows {
            writeln!(f, "{:<22}{:>14}{:>14}", name, cell(a), cell(b))?;
        }
        Ok(())
    }
}
