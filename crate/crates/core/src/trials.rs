//! Human comparison trials: records and the submission rules shared by the
//! annotation service and its clients.

use serde::{Deserialize, Serialize};

use crate::detection::{AnnotationRecord, AnnotationRole};
use crate::eval::Label;

/// Minimum annotations for a same-eye or different-eyes decision.
pub const MIN_CONCLUSIVE_ANNOTATIONS: usize = 5;
/// Minimum annotations for a "don't know" decision.
pub const MIN_INCONCLUSIVE_ANNOTATIONS: usize = 1;
pub const PAIRS_PER_PLAN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStep {
    Evaluation,
    Verification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    SameEye,
    DifferentEyes,
    DontKnow,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::SameEye, Decision::DifferentEyes, Decision::DontKnow];

    /// Whether the decision agrees with the ground truth; "don't know" never does.
    pub fn is_correct(self, truth: Label) -> bool {
        matches!(
            (self, truth),
            (Decision::SameEye, Label::Genuine) | (Decision::DifferentEyes, Label::Impostor)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub step: TrialStep,
    pub pair_id: String,
    pub annotator_id: String,
    /// Ground truth of the pair, never shown to the annotator.
    pub truth: Label,
    pub decision: Option<Decision>,
    pub annotations: Vec<AnnotationRecord>,
    /// Evaluation trial being verified (verification trials only).
    pub prior_trial: Option<String>,
    /// Indices into the prior trial's annotations shown to this annotator.
    pub shown_prior_annotations: Vec<usize>,
    pub created_ms: u64,
    pub completed_ms: Option<u64>,
}

impl TrialRecord {
    pub fn is_open(&self) -> bool {
        self.decision.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmissionError {
    #[error("{decision:?} needs at least {required} {kind} annotations, got {got}")]
    TooFewAnnotations {
        decision: Decision,
        kind: &'static str,
        required: usize,
        got: usize,
    },
    #[error("annotation {index}: {reason}")]
    InvalidAnnotation { index: usize, reason: String },
}

/// Checks the annotation-count rule for a decision: same-eye needs five
/// matching (linked) annotations, different-eyes five non-matching ones,
/// and "don't know" at least one annotation of either kind.
pub fn validate_submission(decision: Decision, annotations: &[AnnotationRecord]) -> Result<(), SubmissionError> {
    for (index, ann) in annotations.iter().enumerate() {
        ann.validate().map_err(|e| SubmissionError::InvalidAnnotation {
            index,
            reason: e.to_string(),
        })?;
    }
    let count = |role| annotations.iter().filter(|a| a.role == role).count();
    let (kind, required, got) = match decision {
        Decision::SameEye => ("matching", MIN_CONCLUSIVE_ANNOTATIONS, count(AnnotationRole::Matching)),
        Decision::DifferentEyes => (
            "non-matching",
            MIN_CONCLUSIVE_ANNOTATIONS,
            count(AnnotationRole::Nonmatching),
        ),
        Decision::DontKnow => ("", MIN_INCONCLUSIVE_ANNOTATIONS, annotations.len()),
    };
    if got < required {
        return Err(SubmissionError::TooFewAnnotations {
            decision,
            kind,
            required,
            got,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Polygon;

    fn tri() -> Polygon {
        Polygon(vec![[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    }

    fn matching() -> AnnotationRecord {
        AnnotationRecord {
            annotator_id: "u1".into(),
            pair_id: "p1".into(),
            role: AnnotationRole::Matching,
            polygons_a: vec![tri()],
            polygons_b: vec![tri()],
            link: Some((0, 0)),
        }
    }

    fn nonmatching() -> AnnotationRecord {
        AnnotationRecord {
            annotator_id: "u1".into(),
            pair_id: "p1".into(),
            role: AnnotationRole::Nonmatching,
            polygons_a: vec![tri()],
            polygons_b: vec![],
            link: None,
        }
    }

    #[test]
    fn same_eye_with_five_linked_pairs_is_accepted() {
        assert!(validate_submission(Decision::SameEye, &vec![matching(); 5]).is_ok());
    }

    #[test]
    fn different_eyes_with_four_is_rejected() {
        let err = validate_submission(Decision::DifferentEyes, &vec![nonmatching(); 4]).unwrap_err();
        assert!(matches!(err, SubmissionError::TooFewAnnotations { got: 4, required: 5, .. }));
    }

    #[test]
    fn conclusive_decisions_count_their_own_role() {
        assert!(validate_submission(Decision::SameEye, &vec![nonmatching(); 6]).is_err());
        assert!(validate_submission(Decision::DifferentEyes, &vec![nonmatching(); 5]).is_ok());
    }

    #[test]
    fn dont_know_needs_one_of_anything() {
        assert!(validate_submission(Decision::DontKnow, &[]).is_err());
        assert!(validate_submission(Decision::DontKnow, &[nonmatching()]).is_ok());
        assert!(validate_submission(Decision::DontKnow, &[matching(), nonmatching()]).is_ok());
    }

    #[test]
    fn malformed_annotation_is_rejected() {
        let mut bad = matching();
        bad.link = None;
        let mut anns = vec![matching(); 5];
        anns.push(bad);
        assert!(matches!(
            validate_submission(Decision::SameEye, &anns),
            Err(SubmissionError::InvalidAnnotation { index: 5, .. })
        ));
    }

    #[test]
    fn correctness() {
        assert!(Decision::SameEye.is_correct(Label::Genuine));
        assert!(!Decision::SameEye.is_correct(Label::Impostor));
        assert!(Decision::DifferentEyes.is_correct(Label::Impostor));
        assert!(!Decision::DontKnow.is_correct(Label::Genuine));
    }
}
