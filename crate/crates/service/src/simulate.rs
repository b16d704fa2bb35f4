//! Randomized operation driver for exercising a service instance, e.g. to
//! check that replaying its log reproduces the index.

use std::collections::BTreeMap;

use pbm_core::detection::{AnnotationRecord, AnnotationRole, Polygon};
use pbm_core::trials::Decision;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::store::{PairRecord, SideAssets, SideInfo, Verdict};
use crate::workflow::App;

const ANNOTATORS: [&str; 6] = ["ann0", "ann1", "ann2", "ann3", "ann4", "ann5"];

/// Outcome counts per operation kind: (succeeded, rejected).
pub type OpStats = BTreeMap<&'static str, (usize, usize)>;

fn annotation(rng: &mut impl Rng, annotator: &str, pair_id: &str, role: AnnotationRole) -> AnnotationRecord {
    let x = rng.random_range(0.0..40.0);
    let y = rng.random_range(0.0..40.0);
    let poly = Polygon(vec![[x, y], [x + 6.0, y], [x + 3.0, y + 5.0]]);
    match role {
        AnnotationRole::Matching => AnnotationRecord {
            annotator_id: annotator.into(),
            pair_id: pair_id.into(),
            role,
            polygons_a: vec![poly.clone()],
            polygons_b: vec![poly],
            link: Some((0, 0)),
        },
        AnnotationRole::Nonmatching => AnnotationRecord {
            annotator_id: annotator.into(),
            pair_id: pair_id.into(),
            role,
            polygons_a: vec![poly],
            polygons_b: vec![],
            link: None,
        },
    }
}

fn bump(stats: &mut OpStats, op: &'static str, ok: bool) {
    let e = stats.entry(op).or_default();
    if ok {
        e.0 += 1;
    } else {
        e.1 += 1;
    }
}

/// Performs `n` random operations (valid and invalid) against `app`.
pub fn run(app: &App, rng: &mut impl Rng, n: usize) -> OpStats {
    let mut stats = OpStats::new();
    let mut fresh = 0usize;
    for _ in 0..n {
        let annotator = *ANNOTATORS.choose(rng).expect("non-empty");
        match rng.random_range(0..100) {
            0..8 => {
                let template = app.store.read(|i| i.pairs.values().next().cloned());
                let pair = PairRecord {
                    pair_id: if rng.random_bool(0.2) {
                        template.as_ref().map_or("sim".into(), |p| p.pair_id.clone())
                    } else {
                        fresh += 1;
                        format!("sim{fresh:04}")
                    },
                    a: template.as_ref().map_or_else(|| placeholder_side("x"), |p| p.a.clone()),
                    b: template.as_ref().map_or_else(|| placeholder_side("y"), |p| p.b.clone()),
                };
                bump(&mut stats, "register", app.register_record(pair).is_ok());
            }
            8..30 => bump(&mut stats, "next_evaluation", matches!(app.next_evaluation_trial(annotator), Ok(Some(_)))),
            30..40 => bump(&mut stats, "next_verification", app.next_verification_trial(annotator).is_ok()),
            40..80 => {
                let open: Vec<(String, String, String)> = app.store.read(|i| {
                    i.trials
                        .values()
                        .filter(|t| t.is_open() || rng.random_bool(0.05))
                        .map(|t| (t.trial_id.clone(), t.pair_id.clone(), t.annotator_id.clone()))
                        .collect()
                });
                let Some((trial_id, pair_id, owner)) = open.choose(rng).cloned() else {
                    bump(&mut stats, "submit", false);
                    continue;
                };
                let decision = *Decision::ALL.choose(rng).expect("non-empty");
                let k = rng.random_range(0..8);
                let anns: Vec<_> = (0..k)
                    .map(|_| {
                        let role = if rng.random_bool(0.5) {
                            AnnotationRole::Matching
                        } else {
                            AnnotationRole::Nonmatching
                        };
                        annotation(rng, &owner, &pair_id, role)
                    })
                    .collect();
                let who = rng.random_bool(0.9).then_some(owner.as_str()).or(Some(annotator));
                bump(&mut stats, "submit", app.submit_decision(&trial_id, who, decision, anns).is_ok());
            }
            80..92 => {
                let ids: Vec<String> = app.store.read(|i| i.pairs.keys().cloned().collect());
                let ok = ids.choose(rng).is_some_and(|id| app.run_comparison(id).is_ok());
                bump(&mut stats, "compare", ok);
            }
            _ => {
                let done: Vec<(String, usize)> = app.store.read(|i| {
                    i.comparisons
                        .iter()
                        .filter_map(|(pair, m)| m.get(app.config_hash()).map(|r| (pair.clone(), r.pairs.len())))
                        .collect()
                });
                let ok = match done.choose(rng) {
                    Some((pair, n_pairs)) => {
                        let index = rng.random_bool(0.7).then(|| rng.random_range(0..n_pairs + 1));
                        let verdict = if rng.random_bool(0.5) {
                            Verdict::Agree
                        } else {
                            Verdict::Disagree
                        };
                        app.record_review(pair, annotator, index, verdict, String::new()).is_ok()
                    }
                    None => false,
                };
                bump(&mut stats, "review", ok);
            }
        }
    }
    stats
}

fn placeholder_side(subject: &str) -> SideInfo {
    SideInfo {
        assets: SideAssets {
            image: format!("{subject}.png"),
            mask: format!("{subject}_mask.png"),
            detections: format!("{subject}.json"),
        },
        subject_id: subject.into(),
        eye: "L".into(),
        pmi_hours: 0.0,
    }
}
