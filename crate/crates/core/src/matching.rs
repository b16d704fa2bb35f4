//! Patch-based matching: angle gate, exhaustive translation search for each
//! candidate patch pair, greedy one-to-one assignment and the final score.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bsif::{self, FilterBank, Offset, PatchCode};
use crate::detection::{self, DetectionSet, Polygon};
use crate::error::{PbmError, Result};
use crate::imaging::{self, ClaheParams, GrayImage, IrisMask, Preprocessed};

/// Score reported when no patch pair survives: chance-level Hamming distance.
pub const NO_EVIDENCE_SCORE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Largest accepted angular difference between paired patches, degrees.
    pub angle_tol_deg: f64,
    /// Number of best pairs averaged into the score.
    pub max_pairs: usize,
    /// Required overlap as a fraction of the smaller patch's usable area.
    pub overlap_frac: f64,
    pub crop_side: usize,
    pub clahe: ClaheParams,
    /// Only the `n` most confident detections per side enter matching.
    pub top_n_detections: Option<usize>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            angle_tol_deg: 20.0,
            max_pairs: 5,
            overlap_frac: 0.5,
            crop_side: imaging::DEFAULT_CROP_SIDE,
            clahe: ClaheParams::default(),
            top_n_detections: None,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.angle_tol_deg >= 0.0) {
            return Err(PbmError::InvalidParameter("angle tolerance must be >= 0".into()));
        }
        if self.max_pairs == 0 {
            return Err(PbmError::InvalidParameter("max_pairs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_frac) {
            return Err(PbmError::InvalidParameter("overlap fraction must be in [0, 1)".into()));
        }
        if self.crop_side == 0 {
            return Err(PbmError::InvalidParameter("crop side must be > 0".into()));
        }
        self.clahe.validate()
    }
}

/// Stable identity of a configuration plus filter bank, used to key stored
/// results.
pub fn config_fingerprint(config: &MatchConfig, bank: &FilterBank) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    hasher.update(bank.to_text().as_bytes());
    hex::encode(hasher.finalize())
}

/// One detected patch ready for matching.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor {
    pub id: String,
    pub code: PatchCode,
    /// Usable-pixel centroid in crop coordinates.
    pub centroid: (f64, f64),
    /// Direction of the patch from the iris centre, degrees in (−180, 180].
    pub angle: f64,
}

impl PatchDescriptor {
    pub fn area(&self) -> usize {
        self.code.area()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub id_a: String,
    pub id_b: String,
    pub distance: f64,
    /// Placement of patch b relative to patch a, see [`bsif::Offset`].
    pub offset: Offset,
    pub overlap_area: usize,
}

/// Geometry of one patch, kept in results for rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub id: String,
    pub polygon: Polygon,
    pub centroid: (f64, f64),
    pub angle: f64,
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub score: f64,
    pub pairs: Vec<MatchPair>,
    pub n_candidates: usize,
    pub no_evidence: bool,
    pub params: MatchConfig,
    pub features_a: Vec<FeatureSummary>,
    pub features_b: Vec<FeatureSummary>,
    /// Source coordinate of each crop's top-left pixel.
    pub crop_offset_a: (i64, i64),
    pub crop_offset_b: (i64, i64),
}

impl ComparisonResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Wrap-aware angular difference in [0, 180].
pub fn angular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

pub fn angular_gate(a: &PatchDescriptor, b: &PatchDescriptor, tol: f64) -> bool {
    angular_difference(a.angle, b.angle) <= tol
}

/// Outcome of the exhaustive translation search for one patch pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentScan {
    /// `(differing_bits, overlap_area)` of the minimum; `None` when no
    /// translation meets the overlap requirement.
    pub best: Option<(u64, usize)>,
    /// Every translation reaching the minimum, in scan order (dy, then dx).
    pub minimizers: Vec<(Offset, usize)>,
    pub n_planes: usize,
}

impl AlignmentScan {
    pub fn distance(&self) -> Option<f64> {
        self.best
            .and_then(|(diff, overlap)| bsif::normalized_distance(diff, overlap, self.n_planes))
    }
}

/// `a_diff / a_overlap` vs `b_diff / b_overlap` without rounding.
fn cmp_ratio(a: (u64, usize), b: (u64, usize)) -> Ordering {
    (a.0 as u128 * b.1 as u128).cmp(&(b.0 as u128 * a.1 as u128))
}

/// Whether an overlap is large enough: strictly more than `frac` of the
/// smaller usable area.
pub fn overlap_sufficient(overlap: usize, area_a: usize, area_b: usize, frac: f64) -> bool {
    overlap as f64 > frac * area_a.min(area_b) as f64
}

/// Tries every integer translation of `b` over `a` that can bring usable
/// pixels together, keeping those whose overlap satisfies the overlap rule.
pub fn alignment_scan(a: &PatchCode, b: &PatchCode, overlap_frac: f64) -> Result<AlignmentScan> {
    if a.n_planes() != b.n_planes() {
        return Err(PbmError::PlaneCountMismatch(a.n_planes(), b.n_planes()));
    }
    let mut best: Option<(u64, usize)> = None;
    let mut minimizers = Vec::new();
    let (wa, ha) = (a.width() as i32, a.height() as i32);
    let (wb, hb) = (b.width() as i32, b.height() as i32);
    for dy in -(hb - 1)..ha {
        for dx in -(wb - 1)..wa {
            let offset = (dx, dy);
            // Cheap mask-only pass prunes most translations.
            let overlap = bsif::overlap_area(a, b, offset);
            if !overlap_sufficient(overlap, a.area(), b.area(), overlap_frac) {
                continue;
            }
            let h = bsif::hamming_masked(a, b, offset)?;
            let cand = (h.differing_bits, h.overlap_area);
            match best.map(|cur| cmp_ratio(cand, cur)) {
                None | Some(Ordering::Less) => {
                    best = Some(cand);
                    minimizers.clear();
                    minimizers.push((offset, overlap));
                }
                Some(Ordering::Equal) => minimizers.push((offset, overlap)),
                Some(Ordering::Greater) => {}
            }
        }
    }
    Ok(AlignmentScan {
        best,
        minimizers,
        n_planes: a.n_planes(),
    })
}

/// Smallest masked Hamming distance over all admissible translations, or
/// `None` when the pair cannot overlap enough.
pub fn best_alignment_distance(
    a: &PatchDescriptor,
    b: &PatchDescriptor,
    overlap_frac: f64,
) -> Result<Option<MatchPair>> {
    let scan = alignment_scan(&a.code, &b.code, overlap_frac)?;
    Ok(scan.distance().map(|distance| {
        let (offset, overlap_area) = scan.minimizers[0];
        MatchPair {
            id_a: a.id.clone(),
            id_b: b.id.clone(),
            distance,
            offset,
            overlap_area,
        }
    }))
}

/// All gate-passing pairs with an admissible alignment, in (a, b) order.
pub fn enumerate_valid_pairs(
    a: &[PatchDescriptor],
    b: &[PatchDescriptor],
    angle_tol: f64,
    overlap_frac: f64,
) -> Result<Vec<MatchPair>> {
    let candidates: Vec<(&PatchDescriptor, &PatchDescriptor)> = a
        .iter()
        .flat_map(|pa| b.iter().map(move |pb| (pa, pb)))
        .filter(|(pa, pb)| angular_gate(pa, pb, angle_tol))
        .collect();
    let found = candidates
        .par_iter()
        .map(|(pa, pb)| best_alignment_distance(pa, pb, overlap_frac))
        .collect::<Result<Vec<_>>>()?;
    Ok(found.into_iter().flatten().collect())
}

fn pair_order(x: &MatchPair, y: &MatchPair) -> Ordering {
    x.distance
        .total_cmp(&y.distance)
        .then_with(|| x.id_a.cmp(&y.id_a))
        .then_with(|| x.id_b.cmp(&y.id_b))
}

/// Ranks pairs by distance (ties by `(id_a, id_b)`) and keeps each pair whose
/// patches are both still unused.
pub fn greedy_assign(pairs: &[MatchPair]) -> Vec<MatchPair> {
    let mut sorted: Vec<&MatchPair> = pairs.iter().collect();
    sorted.sort_by(|x, y| pair_order(x, y));
    let mut used_a = HashSet::new();
    let mut used_b = HashSet::new();
    let mut kept = Vec::new();
    for p in sorted {
        if used_a.contains(p.id_a.as_str()) || used_b.contains(p.id_b.as_str()) {
            continue;
        }
        used_a.insert(p.id_a.as_str());
        used_b.insert(p.id_b.as_str());
        kept.push(p.clone());
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub score: f64,
    pub pairs: Vec<MatchPair>,
    pub no_evidence: bool,
}

/// Mean distance of the `max_pairs` closest assigned pairs (or of all of
/// them when fewer); [`NO_EVIDENCE_SCORE`] with the flag set when empty.
pub fn comparison_score(assigned: &[MatchPair], max_pairs: usize) -> PairScore {
    let mut pairs = assigned.to_vec();
    pairs.sort_by(pair_order);
    pairs.truncate(max_pairs);
    if pairs.is_empty() {
        return PairScore {
            score: NO_EVIDENCE_SCORE,
            pairs,
            no_evidence: true,
        };
    }
    let score = pairs.iter().map(|p| p.distance).sum::<f64>() / pairs.len() as f64;
    PairScore {
        score,
        pairs,
        no_evidence: false,
    }
}

/// One side of a comparison as supplied by the caller.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub image: &'a GrayImage,
    pub mask: &'a IrisMask,
    /// Detections in crop coordinates.
    pub detections: &'a DetectionSet,
}

/// Matching-ready features of one preprocessed sample.
#[derive(Debug, Clone)]
pub struct SideFeatures {
    pub preprocessed: Preprocessed,
    pub iris_center: (f64, f64),
    pub descriptors: Vec<PatchDescriptor>,
    pub summaries: Vec<FeatureSummary>,
    /// Detections dropped because no usable code pixel remained under them.
    pub skipped: Vec<String>,
}

/// Preprocess, encode and describe every detection of one sample.
pub fn extract_features(sample: Sample<'_>, bank: &FilterBank, config: &MatchConfig) -> Result<SideFeatures> {
    let side = config.crop_side;
    let dets = sample.detections;
    if dets.width != side || dets.height != side {
        return Err(PbmError::DimensionMismatch {
            expected_w: side,
            expected_h: side,
            got_w: dets.width,
            got_h: dets.height,
        });
    }
    let dets = match config.top_n_detections {
        Some(n) => dets.top_n(n),
        None => dets.clone(),
    };
    let pre = imaging::preprocess(sample.image, sample.mask, side, &config.clahe)?;
    let iris_center = imaging::mask_centroid(&pre.mask)?;
    let code = bsif::encode(&pre.image, &pre.mask, bank)?;

    let mut descriptors = Vec::new();
    let mut summaries = Vec::new();
    let mut skipped = Vec::new();
    for det in &dets.detections {
        let described = bsif::extract_patch_code(&code, &det.shape_mask).and_then(|patch| {
            let angle = detection::patch_angle(det, iris_center)?;
            Ok((patch, angle))
        });
        match described {
            Ok((patch, angle)) => {
                let centroid = patch.usable_centroid();
                summaries.push(FeatureSummary {
                    id: det.id.clone(),
                    polygon: det.polygon.clone(),
                    centroid,
                    angle,
                    area: patch.area(),
                });
                descriptors.push(PatchDescriptor {
                    id: det.id.clone(),
                    code: patch,
                    centroid,
                    angle,
                });
            }
            Err(PbmError::UnusablePatch | PbmError::CoincidentCenter) => skipped.push(det.id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok(SideFeatures {
        preprocessed: pre,
        iris_center,
        descriptors,
        summaries,
        skipped,
    })
}

/// Matches two described samples.
pub fn match_features(a: &SideFeatures, b: &SideFeatures, config: &MatchConfig) -> Result<ComparisonResult> {
    config.validate()?;
    let candidates = enumerate_valid_pairs(
        &a.descriptors,
        &b.descriptors,
        config.angle_tol_deg,
        config.overlap_frac,
    )?;
    let assigned = greedy_assign(&candidates);
    let scored = comparison_score(&assigned, config.max_pairs);
    Ok(ComparisonResult {
        score: scored.score,
        pairs: scored.pairs,
        n_candidates: candidates.len(),
        no_evidence: scored.no_evidence,
        params: config.clone(),
        features_a: a.summaries.clone(),
        features_b: b.summaries.clone(),
        crop_offset_a: a.preprocessed.offset,
        crop_offset_b: b.preprocessed.offset,
    })
}

/// Full pipeline: preprocess both samples, encode, describe, match and score.
pub fn compare(a: Sample<'_>, b: Sample<'_>, bank: &FilterBank, config: &MatchConfig) -> Result<ComparisonResult> {
    config.validate()?;
    let fa = extract_features(a, bank, config)?;
    let fb = extract_features(b, bank, config)?;
    match_features(&fa, &fb, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsif::BitPlane;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn patch_from(planes: Vec<BitPlane>, usable: BitPlane) -> PatchCode {
        PatchCode::from_parts((0, 0), planes, usable).unwrap()
    }

    fn descriptor(id: &str, code: PatchCode, angle: f64) -> PatchDescriptor {
        PatchDescriptor {
            id: id.into(),
            centroid: (0.0, 0.0),
            angle,
            code,
        }
    }

    fn random_rect_patch(rng: &mut impl Rng, w: usize, h: usize, n: usize) -> PatchCode {
        let planes = (0..n)
            .map(|_| BitPlane::from_fn(w, h, |_, _| rng.random_bool(0.5)))
            .collect();
        patch_from(planes, BitPlane::from_fn(w, h, |_, _| true))
    }

    fn pair(a: &str, b: &str, d: f64) -> MatchPair {
        MatchPair {
            id_a: a.into(),
            id_b: b.into(),
            distance: d,
            offset: (0, 0),
            overlap_area: 1,
        }
    }

    #[test]
    fn gate_examples() {
        assert_eq!(angular_difference(30.0, 55.0), 25.0);
        assert!(angular_difference(30.0, 55.0) > 20.0);
        assert_eq!(angular_difference(-10.0, 10.0), 20.0);
        assert_eq!(angular_difference(350.0, 10.0), 20.0);
        assert_eq!(angular_difference(179.0, -179.0), 2.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = descriptor("a", random_rect_patch(&mut rng, 3, 3, 1), 123.0);
        assert!(angular_gate(&d, &d, 0.0));
        let mut e = d.clone();
        e.angle = -10.0;
        let mut f = d.clone();
        f.angle = 10.0;
        assert!(angular_gate(&e, &f, 20.0));
    }

    #[test]
    fn identical_rectangles_align_at_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let code = random_rect_patch(&mut rng, 12, 9, 5);
        let a = descriptor("a", code.clone(), 0.0);
        let b = descriptor("b", code, 0.0);
        let m = best_alignment_distance(&a, &b, 0.5).unwrap().unwrap();
        assert_eq!(m.distance, 0.0);
        assert_eq!(m.offset, (0, 0));
        assert_eq!(m.overlap_area, 108);
    }

    #[test]
    fn complement_is_at_distance_one() {
        // A 4x4 all-zero patch against all-ones: every overlap disagrees.
        let zeros = patch_from(vec![BitPlane::new(4, 4); 5], BitPlane::from_fn(4, 4, |_, _| true));
        let ones = patch_from(
            vec![BitPlane::from_fn(4, 4, |_, _| true); 5],
            BitPlane::from_fn(4, 4, |_, _| true),
        );
        let m = best_alignment_distance(&descriptor("a", zeros, 0.0), &descriptor("b", ones, 0.0), 0.5)
            .unwrap()
            .unwrap();
        assert_eq!(m.distance, 1.0);
    }

    #[test]
    fn insufficient_overlap_rejects() {
        let a_use = BitPlane::from_fn(4, 1, |x, _| x == 0 || x == 3);
        let b_use = BitPlane::from_fn(4, 1, |x, _| x == 0 || x == 2);
        let a = patch_from(vec![BitPlane::new(4, 1)], a_use);
        let b = patch_from(vec![BitPlane::new(4, 1)], b_use);
        // Best overlap is one pixel out of two: not strictly more than half.
        let got = best_alignment_distance(&descriptor("a", a, 0.0), &descriptor("b", b, 0.0), 0.5).unwrap();
        assert!(got.is_none());
    }

    #[test]
    fn enumerate_pairs_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = random_rect_patch(&mut rng, 5, 5, 2);
        assert!(enumerate_valid_pairs(&[], &[descriptor("b", p.clone(), 0.0)], 20.0, 0.5)
            .unwrap()
            .is_empty());
        let gated = enumerate_valid_pairs(
            &[descriptor("a", p.clone(), 0.0)],
            &[descriptor("b", p.clone(), 90.0)],
            20.0,
            0.5,
        )
        .unwrap();
        assert!(gated.is_empty());
    }

    #[test]
    fn enumerate_pairs_three_by_three_grid() {
        // a angles {0, 100, -120}, b angles {15, 130, -100}: of the nine
        // combinations only (a0, b0) at 15° and (a2, b2) at 20° pass the gate.
        // a2/b2 have usable pixels {0, 3} and {0, 2} on one row, so their best
        // overlap is 1 of 2 pixels and the overlap rule rejects them.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let rect = |rng: &mut rand_chacha::ChaCha8Rng| random_rect_patch(rng, 6, 6, 3);
        let sparse = |keep: [usize; 2]| {
            patch_from(vec![BitPlane::new(4, 1); 3], BitPlane::from_fn(4, 1, |x, _| keep.contains(&x)))
        };
        let a = vec![
            descriptor("a0", rect(&mut rng), 0.0),
            descriptor("a1", rect(&mut rng), 100.0),
            descriptor("a2", sparse([0, 3]), -120.0),
        ];
        let b = vec![
            descriptor("b0", rect(&mut rng), 15.0),
            descriptor("b1", rect(&mut rng), 130.0),
            descriptor("b2", sparse([0, 2]), -100.0),
        ];
        let mut gated = Vec::new();
        for da in &a {
            for db in &b {
                if angular_gate(da, db, 20.0) {
                    gated.push((da.id.as_str(), db.id.as_str()));
                }
            }
        }
        assert_eq!(gated, vec![("a0", "b0"), ("a2", "b2")]);

        let got = enumerate_valid_pairs(&a, &b, 20.0, 0.5).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].id_a.as_str(), got[0].id_b.as_str()), ("a0", "b0"));
        assert!(overlap_sufficient(got[0].overlap_area, 36, 36, 0.5));
    }

    #[test]
    fn greedy_example() {
        let pairs = vec![pair("A1", "B1", 0.10), pair("A1", "B2", 0.20), pair("A2", "B2", 0.15)];
        let kept = greedy_assign(&pairs);
        assert_eq!(kept, vec![pair("A1", "B1", 0.10), pair("A2", "B2", 0.15)]);
    }

    #[test]
    fn greedy_disjoint_keeps_all_sorted() {
        let pairs = vec![pair("A1", "B1", 0.3), pair("A2", "B2", 0.1), pair("A3", "B3", 0.2)];
        let kept = greedy_assign(&pairs);
        let d: Vec<f64> = kept.iter().map(|p| p.distance).collect();
        assert_eq!(d, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn greedy_ties_break_by_ids() {
        let pairs = vec![pair("A2", "B1", 0.2), pair("A1", "B1", 0.2)];
        assert_eq!(greedy_assign(&pairs), vec![pair("A1", "B1", 0.2)]);
    }

    #[test]
    fn score_examples() {
        let seven: Vec<MatchPair> = [0.1, 0.12, 0.14, 0.16, 0.18, 0.3, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &d)| pair(&format!("a{i}"), &format!("b{i}"), d))
            .collect();
        let s = comparison_score(&seven, 5);
        assert!((s.score - 0.14).abs() < 1e-12);
        assert_eq!(s.pairs.len(), 5);
        assert!(!s.no_evidence);

        let three: Vec<MatchPair> = [0.2, 0.3, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &d)| pair(&format!("a{i}"), &format!("b{i}"), d))
            .collect();
        assert!((comparison_score(&three, 5).score - 0.3).abs() < 1e-12);

        let none = comparison_score(&[], 5);
        assert_eq!(none.score, 0.5);
        assert!(none.no_evidence && none.pairs.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::default().validate().is_ok());
        let bad = MatchConfig {
            max_pairs: 0,
            ..MatchConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MatchConfig {
            overlap_frac: 1.0,
            ..MatchConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_config_and_bank() {
        let bank = FilterBank::placeholder(2, 3, 1).unwrap();
        let c = MatchConfig::default();
        let f1 = config_fingerprint(&c, &bank);
        assert_eq!(f1, config_fingerprint(&c.clone(), &bank));
        let c2 = MatchConfig {
            angle_tol_deg: 10.0,
            ..c.clone()
        };
        assert_ne!(f1, config_fingerprint(&c2, &bank));
        assert_ne!(f1, config_fingerprint(&c, &FilterBank::placeholder(2, 3, 2).unwrap()));
    }

    /// Second, independently written version of the assignment rule.
    fn reference_greedy(pairs: &[MatchPair]) -> Vec<MatchPair> {
        let mut remaining = pairs.to_vec();
        let mut out = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                let (x, y) = (&remaining[i], &remaining[best]);
                let better = x.distance < y.distance
                    || (x.distance == y.distance && (x.id_a.as_str(), x.id_b.as_str()) < (y.id_a.as_str(), y.id_b.as_str()));
                if better {
                    best = i;
                }
            }
            let chosen = remaining.swap_remove(best);
            remaining.retain(|p| p.id_a != chosen.id_a && p.id_b != chosen.id_b);
            out.push(chosen);
        }
        out
    }

    proptest! {
        #[test]
        fn greedy_matches_reference(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<MatchPair> = (0..8)
                .flat_map(|i| (0..8).map(move |j| (i, j)))
                .filter_map(|(i, j)| {
                    rng.random_bool(0.6)
                        .then(|| pair(&format!("A{i}"), &format!("B{j}"), (rng.random_range(0..20) as f64) / 20.0))
                })
                .collect();
            prop_assert_eq!(greedy_assign(&pairs), reference_greedy(&pairs));
        }

        #[test]
        fn dropping_unselected_pair_changes_nothing(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<MatchPair> = (0..30)
                .map(|_| pair(&format!("A{}", rng.random_range(0..6)), &format!("B{}", rng.random_range(0..6)), rng.random_range(0.0..1.0)))
                .collect();
            let kept = greedy_assign(&pairs);
            if let Some(pos) = pairs.iter().position(|p| !kept.contains(p)) {
                let mut fewer = pairs.clone();
                fewer.remove(pos);
                prop_assert_eq!(greedy_assign(&fewer), kept);
            }
        }
    }
}
