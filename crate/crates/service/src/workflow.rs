//! Trial scheduling, decision intake, comparisons and reviews on top of the
//! [`Store`].

use std::path::{Component, Path, PathBuf};

use pbm_core::bsif::FilterBank;
use pbm_core::detection::{self, AnnotationRecord, DetectionSet};
use pbm_core::eval::Label;
use pbm_core::imaging::{GrayImage, IrisMask};
use pbm_core::matching::{self, ComparisonResult, MatchConfig, Sample};
use pbm_core::report;
use pbm_core::trials::{Decision, TrialRecord, TrialStep, PAIRS_PER_PLAN};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};
use crate::store::{Event, Index, PairRecord, ReviewRecord, SideAssets, SideInfo, Store, TrialPlan, Verdict};

/// Default low-PMI threshold of the pool filter, in hours.
pub const DEFAULT_LOW_PMI_HOURS: f64 = 72.0;
const CLAIM_RETRIES: usize = 8;

/// Which registered pairs may enter a trial plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoolFilter {
    All,
    /// At least one side captured no later than `max_hours` after death.
    LowPmi { max_hours: f64 },
}

impl Default for PoolFilter {
    fn default() -> Self {
        PoolFilter::LowPmi {
            max_hours: DEFAULT_LOW_PMI_HOURS,
        }
    }
}

impl PoolFilter {
    pub fn admits(&self, pair: &PairRecord) -> bool {
        match *self {
            PoolFilter::All => true,
            PoolFilter::LowPmi { max_hours } => pair.min_pmi_hours() <= max_hours,
        }
    }
}

/// RNG keyed by a list of strings, so each (annotator, seed, purpose) gets
/// its own reproducible stream.
pub fn keyed_rng(parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Selects half genuine, half impostor pairs and orders them by a seeded
/// permutation specific to the annotator.
pub fn plan_trials(annotator_id: &str, pool: &[PairRecord], seed: u64) -> Result<TrialPlan> {
    let need = PAIRS_PER_PLAN / 2;
    let mut genuine: Vec<&PairRecord> = pool.iter().filter(|p| p.label() == Label::Genuine).collect();
    let mut impostor: Vec<&PairRecord> = pool.iter().filter(|p| p.label() == Label::Impostor).collect();
    if genuine.len() < need || impostor.len() < need {
        return Err(ServiceError::InsufficientPool {
            genuine: genuine.len(),
            impostor: impostor.len(),
            need,
        });
    }
    genuine.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    impostor.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let seed_text = seed.to_string();
    let mut rng = keyed_rng(&["plan", annotator_id, &seed_text]);
    let mut chosen: Vec<&PairRecord> = genuine.choose_multiple(&mut rng, need).copied().collect();
    chosen.extend(impostor.choose_multiple(&mut rng, need).copied());
    chosen.shuffle(&mut rng);
    Ok(TrialPlan {
        annotator_id: annotator_id.to_string(),
        seed,
        pair_ids: chosen.iter().map(|p| p.pair_id.clone()).collect(),
        n_genuine: need,
        n_impostor: need,
    })
}

/// Subset of a prior trial's annotations shown to the verifier: size uniform
/// over [1, n], members uniform, returned in ascending order.
pub fn verification_subset(prior_trial_id: &str, n: usize, seed: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let seed_text = seed.to_string();
    let mut rng = keyed_rng(&["verify", prior_trial_id, &seed_text]);
    let k = rng.random_range(1..=n);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// What an annotator sees for a trial. Ground truth is never included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub trial_id: String,
    pub step: TrialStep,
    pub pair_id: String,
    pub annotator_id: String,
    pub image_a: String,
    pub image_b: String,
    pub decision: Option<Decision>,
    pub prior_trial: Option<String>,
    pub prior_decision: Option<Decision>,
    pub shown_prior_annotations: Vec<AnnotationRecord>,
    /// Position of this trial in the annotator's plan (evaluation only).
    pub position: Option<usize>,
    pub plan_length: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRegistration {
    pub pair_id: String,
    pub a: SideAssets,
    pub b: SideAssets,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Root of the asset tree; registered paths are relative to it.
    pub asset_dir: PathBuf,
    pub seed: u64,
    pub match_config: MatchConfig,
    pub bank: FilterBank,
    pub pool_filter: PoolFilter,
}

pub struct App {
    pub store: Store,
    pub config: ServiceConfig,
    config_hash: String,
}

impl App {
    pub fn new(store: Store, config: ServiceConfig) -> Result<Self> {
        config.match_config.validate()?;
        let config_hash = matching::config_fingerprint(&config.match_config, &config.bank);
        Ok(Self {
            store,
            config,
            config_hash,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn asset_path(&self, rel: &str) -> Result<PathBuf> {
        let p = Path::new(rel);
        if rel.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(ServiceError::Invalid(format!("asset path must be relative and plain: {rel}")));
        }
        let full = self.config.asset_dir.join(p);
        if !full.is_file() {
            return Err(ServiceError::MissingAsset(rel.to_string()));
        }
        Ok(full)
    }

    fn load_side(&self, assets: &SideAssets) -> Result<(GrayImage, IrisMask, DetectionSet)> {
        let image = GrayImage::load_png(self.asset_path(&assets.image)?)?;
        let mask = IrisMask::load_png(self.asset_path(&assets.mask)?)?;
        let dets = detection::parse_detections(self.asset_path(&assets.detections)?)?;
        Ok((image, mask, dets))
    }

    fn describe_side(&self, assets: SideAssets) -> Result<SideInfo> {
        let (image, mask, dets) = self.load_side(&assets)?;
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(ServiceError::Invalid(format!("{}: image and mask sizes differ", assets.image)));
        }
        Ok(SideInfo {
            assets,
            subject_id: dets.subject_id.clone(),
            eye: format!("{:?}", dets.eye),
            pmi_hours: dets.pmi_hours,
        })
    }

    /// Checks that every asset exists and parses, then records the pair.
    pub fn register_pair(&self, reg: PairRegistration) -> Result<PairRecord> {
        if reg.pair_id.is_empty() {
            return Err(ServiceError::Invalid("pair_id is empty".into()));
        }
        let pair = PairRecord {
            pair_id: reg.pair_id,
            a: self.describe_side(reg.a)?,
            b: self.describe_side(reg.b)?,
        };
        self.register_record(pair)
    }

    /// Records an already described pair without touching the asset tree.
    pub fn register_record(&self, pair: PairRecord) -> Result<PairRecord> {
        self.store.commit(|_, _| {
            Ok((
                Event::PairRegistered { pair: pair.clone() },
                pair,
            ))
        })
    }

    fn view(&self, index: &Index, trial: &TrialRecord) -> Result<TrialView> {
        let pair = index
            .pairs
            .get(&trial.pair_id)
            .ok_or_else(|| ServiceError::NotFound(format!("pair {}", trial.pair_id)))?;
        let prior = trial.prior_trial.as_ref().and_then(|id| index.trials.get(id));
        let plan = index.plans.get(&trial.annotator_id);
        let position = match trial.step {
            TrialStep::Evaluation => plan.and_then(|p| p.pair_ids.iter().position(|id| *id == trial.pair_id)),
            TrialStep::Verification => None,
        };
        Ok(TrialView {
            trial_id: trial.trial_id.clone(),
            step: trial.step,
            pair_id: trial.pair_id.clone(),
            annotator_id: trial.annotator_id.clone(),
            image_a: pair.a.assets.image.clone(),
            image_b: pair.b.assets.image.clone(),
            decision: trial.decision,
            prior_trial: trial.prior_trial.clone(),
            prior_decision: prior.and_then(|p| p.decision),
            shown_prior_annotations: prior
                .map(|p| {
                    trial
                        .shown_prior_annotations
                        .iter()
                        .filter_map(|&i| p.annotations.get(i).cloned())
                        .collect()
                })
                .unwrap_or_default(),
            position,
            plan_length: position.and(plan.map(|p| p.pair_ids.len())),
        })
    }

    pub fn trial_view(&self, trial_id: &str) -> Result<TrialView> {
        self.store.read(|index| {
            let t = index
                .trials
                .get(trial_id)
                .ok_or_else(|| ServiceError::NotFound(format!("trial {trial_id}")))?;
            self.view(index, t)
        })
    }

    /// Creates the annotator's plan on first use and returns the next open
    /// evaluation trial in plan order. `Ok(None)` once the plan is done.
    pub fn next_evaluation_trial(&self, annotator_id: &str) -> Result<Option<TrialView>> {
        if annotator_id.is_empty() {
            return Err(ServiceError::Invalid("annotator id is empty".into()));
        }
        let has_plan = self.store.read(|i| i.plans.contains_key(annotator_id));
        if !has_plan {
            let created = self.store.commit(|index, at_ms| {
                if index.plans.contains_key(annotator_id) {
                    return Err(ServiceError::Conflict("plan created concurrently".into()));
                }
                let pool: Vec<PairRecord> = index
                    .pairs
                    .values()
                    .filter(|p| self.config.pool_filter.admits(p))
                    .cloned()
                    .collect();
                let plan = plan_trials(annotator_id, &pool, self.config.seed)?;
                let trials = plan
                    .pair_ids
                    .iter()
                    .enumerate()
                    .map(|(k, pair_id)| TrialRecord {
                        trial_id: Index::trial_id_for(index.next_seq, k),
                        step: TrialStep::Evaluation,
                        pair_id: pair_id.clone(),
                        annotator_id: annotator_id.to_string(),
                        truth: index.pairs[pair_id].label(),
                        decision: None,
                        annotations: Vec::new(),
                        prior_trial: None,
                        shown_prior_annotations: Vec::new(),
                        created_ms: at_ms,
                        completed_ms: None,
                    })
                    .collect();
                Ok((Event::TrialsPlanned { plan, trials }, ()))
            });
            match created {
                Ok(()) | Err(ServiceError::Conflict(_)) => {}
                Err(e) => return Err(e),
            }
        }
        self.store.read(|index| {
            index
                .open_trial(annotator_id, TrialStep::Evaluation)
                .map(|t| self.view(index, t))
                .transpose()
        })
    }

    /// Returns the annotator's open verification trial, or claims the oldest
    /// completed evaluation trial by someone else. The candidate is chosen
    /// under the read lock and claimed under the write lock; a lost race
    /// retries with the next candidate.
    pub fn next_verification_trial(&self, annotator_id: &str) -> Result<TrialView> {
        if annotator_id.is_empty() {
            return Err(ServiceError::Invalid("annotator id is empty".into()));
        }
        for _ in 0..CLAIM_RETRIES {
            let candidate: Result<Result<TrialRecord, TrialView>> = self.store.read(|index| {
                if let Some(open) = index.open_trial(annotator_id, TrialStep::Verification) {
                    return Ok(Err(self.view(index, open)?));
                }
                let prior = index.verification_backlog(annotator_id).next().ok_or(ServiceError::NothingToVerify)?;
                Ok(Ok(prior.clone()))
            });
            let prior = match candidate? {
                Err(existing) => return Ok(existing),
                Ok(prior) => prior,
            };
            let shown = verification_subset(&prior.trial_id, prior.annotations.len(), self.config.seed);
            let claimed = self.store.commit(|index, at_ms| {
                if index.verifications.contains_key(&prior.trial_id) {
                    return Err(ServiceError::Conflict(format!("{} already claimed", prior.trial_id)));
                }
                let trial = TrialRecord {
                    trial_id: Index::trial_id_for(index.next_seq, 0),
                    step: TrialStep::Verification,
                    pair_id: prior.pair_id.clone(),
                    annotator_id: annotator_id.to_string(),
                    truth: prior.truth,
                    decision: None,
                    annotations: Vec::new(),
                    prior_trial: Some(prior.trial_id.clone()),
                    shown_prior_annotations: shown.clone(),
                    created_ms: at_ms,
                    completed_ms: None,
                };
                let id = trial.trial_id.clone();
                Ok((Event::VerificationAssigned { trial }, id))
            });
            match claimed {
                Ok(id) => return self.trial_view(&id),
                Err(ServiceError::Conflict(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(ServiceError::Conflict("could not claim a verification trial".into()))
    }

    /// Closes a trial. Any validation failure leaves the store untouched.
    pub fn submit_decision(
        &self,
        trial_id: &str,
        annotator_id: Option<&str>,
        decision: Decision,
        annotations: Vec<AnnotationRecord>,
    ) -> Result<TrialRecord> {
        self.store.commit(|index, _| {
            let trial = index
                .trials
                .get(trial_id)
                .ok_or_else(|| ServiceError::NotFound(format!("trial {trial_id}")))?;
            if let Some(who) = annotator_id {
                if who != trial.annotator_id {
                    return Err(ServiceError::Conflict(format!("trial {trial_id} belongs to another annotator")));
                }
            }
            for (i, a) in annotations.iter().enumerate() {
                if a.pair_id != trial.pair_id || a.annotator_id != trial.annotator_id {
                    return Err(ServiceError::Invalid(format!(
                        "annotation {i} does not belong to this trial's pair and annotator"
                    )));
                }
            }
            let mut closed = trial.clone();
            closed.decision = Some(decision);
            closed.annotations = annotations.clone();
            Ok((
                Event::DecisionSubmitted {
                    trial_id: trial_id.to_string(),
                    decision,
                    annotations,
                },
                closed,
            ))
        })
        .map(|mut closed| {
            closed.completed_ms = self.store.read(|i| i.trials.get(trial_id).and_then(|t| t.completed_ms));
            closed
        })
    }

    pub fn stored_result(&self, pair_id: &str) -> Option<ComparisonResult> {
        self.store.read(|i| i.comparisons.get(pair_id).and_then(|m| m.get(&self.config_hash)).cloned())
    }

    /// Compares a registered pair under the service configuration. Results
    /// are stored once per (pair, configuration); reruns return the stored
    /// result.
    pub fn run_comparison(&self, pair_id: &str) -> Result<ComparisonResult> {
        let pair = self
            .store
            .read(|i| i.pairs.get(pair_id).cloned())
            .ok_or_else(|| ServiceError::MissingAsset(format!("pair {pair_id} is not registered")))?;
        if let Some(r) = self.stored_result(pair_id) {
            return Ok(r);
        }
        let (ia, ma, da) = self.load_side(&pair.a.assets)?;
        let (ib, mb, db) = self.load_side(&pair.b.assets)?;
        let result = matching::compare(
            Sample {
                image: &ia,
                mask: &ma,
                detections: &da,
            },
            Sample {
                image: &ib,
                mask: &mb,
                detections: &db,
            },
            &self.config.bank,
            &self.config.match_config,
        )?;
        let stored = self.store.commit(|index, _| {
            if index.comparisons.get(pair_id).is_some_and(|m| m.contains_key(&self.config_hash)) {
                return Err(ServiceError::Conflict(format!("result for {pair_id} exists")));
            }
            Ok((
                Event::ComparisonStored {
                    pair_id: pair_id.to_string(),
                    config_hash: self.config_hash.clone(),
                    result: Box::new(result.clone()),
                },
                result,
            ))
        });
        match stored {
            Err(ServiceError::Conflict(_)) => self
                .stored_result(pair_id)
                .ok_or_else(|| ServiceError::NotFound(format!("result for {pair_id}"))),
            other => other,
        }
    }

    /// SVG evidence for the stored result of a pair.
    pub fn evidence_svg(&self, pair_id: &str) -> Result<String> {
        let result = self
            .stored_result(pair_id)
            .ok_or_else(|| ServiceError::NotFound(format!("result for {pair_id}")))?;
        let pair = self
            .store
            .read(|i| i.pairs.get(pair_id).cloned())
            .ok_or_else(|| ServiceError::NotFound(format!("pair {pair_id}")))?;
        let side = result.params.crop_side;
        let crop = |assets: &SideAssets, offset| -> Result<GrayImage> {
            let img = GrayImage::load_png(self.asset_path(&assets.image)?)?;
            Ok(report::crop_for_display(&img, offset, side)?)
        };
        let a = crop(&pair.a.assets, result.crop_offset_a)?;
        let b = crop(&pair.b.assets, result.crop_offset_b)?;
        Ok(report::render_comparison(&result, &a, &b)?)
    }

    pub fn record_review(
        &self,
        pair_id: &str,
        annotator_id: &str,
        match_index: Option<usize>,
        verdict: Verdict,
        comment: String,
    ) -> Result<ReviewRecord> {
        if annotator_id.is_empty() {
            return Err(ServiceError::Invalid("annotator id is empty".into()));
        }
        self.store.commit(|_, at_ms| {
            let review = ReviewRecord {
                pair_id: pair_id.to_string(),
                config_hash: self.config_hash.clone(),
                annotator_id: annotator_id.to_string(),
                match_index,
                verdict,
                comment,
                created_ms: at_ms,
            };
            Ok((Event::ReviewRecorded { review: review.clone() }, review))
        })
    }

    pub fn reviews(&self, pair_id: &str) -> Vec<ReviewRecord> {
        self.store.read(|i| i.reviews.get(pair_id).cloned().unwrap_or_default())
    }

    pub fn trials(&self) -> Vec<TrialRecord> {
        self.store.read(|i| i.trials.values().cloned().collect())
    }
}
