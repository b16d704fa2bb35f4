//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p pbm-cli --test acceptance`.

use std::collections::HashSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use pbm_core::bsif::{self, BitPlane, FilterBank, PatchCode};
use pbm_core::detection::{self, AnnotationMask, FallbackParams, Polygon, ShapeMask};
use pbm_core::eval::{self, Label, ScoreRecord, ScoreSet};
use pbm_core::imaging::ClaheParams;
use pbm_core::matching::{self, MatchConfig, MatchPair, PatchDescriptor, Sample};
use pbm_core::synth::{self, SynthParams};
use pbm_service::simulate;
use pbm_service::store::{replay, SideAssets, StepClock, Store};
use pbm_service::workflow::{PairRegistration, PoolFilter};
use pbm_service::{App, ServiceConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bank() -> FilterBank {
    FilterBank::placeholder(5, 17, 11).unwrap()
}

fn identity_match() -> Check {
    let p = SynthParams::default();
    let config = MatchConfig::default();
    let bank = bank();
    let mut worst = 0.0f64;
    let mut min_pairs = usize::MAX;
    for i in 0..5 {
        let id = synth::identity(i, 404, &p).unwrap();
        let dets = synth::detect_on_crop(
            "copy",
            &id.subject_id,
            &id.texture,
            &id.mask,
            config.crop_side,
            &config.clahe,
            &FallbackParams::default(),
            0.0,
        )
        .unwrap();
        let (image, mask) = (id.texture.clone(), id.mask.clone());
        let a = Sample { image: &id.texture, mask: &id.mask, detections: &dets };
        let b = Sample { image: &image, mask: &mask, detections: &dets };
        let start = Instant::now();
        let r = matching::compare(a, b, &bank, &config).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        ensure(r.score == 0.0, || format!("identity {i}: score {}", r.score))?;
        ensure(!r.pairs.is_empty() && !r.no_evidence, || format!("identity {i}: no accepted pair"))?;
        ensure(secs < 1.0, || format!("identity {i}: {secs:.3} s"))?;
        worst = worst.max(secs);
        min_pairs = min_pairs.min(r.pairs.len());
    }
    Ok(format!("5 identities at 256x256, score 0, >= {min_pairs} pairs, slowest {worst:.3} s"))
}

/// Patch with explicit bits, kept alongside for the per-pixel oracle.
struct Raw {
    w: usize,
    h: usize,
    planes: Vec<Vec<bool>>,
    usable: Vec<bool>,
}

impl Raw {
    fn random(rng: &mut impl Rng, n_planes: usize) -> Self {
        let w = rng.random_range(1..=12);
        let h = rng.random_range(1..=12);
        let density = rng.random_range(0.2..1.0);
        Raw {
            w,
            h,
            planes: (0..n_planes).map(|_| (0..w * h).map(|_| rng.random_bool(0.5)).collect()).collect(),
            usable: (0..w * h).map(|_| rng.random_bool(density)).collect(),
        }
    }

    fn code(&self) -> PatchCode {
        let planes = self
            .planes
            .iter()
            .map(|p| BitPlane::from_fn(self.w, self.h, |x, y| p[y * self.w + x]))
            .collect();
        let usable = BitPlane::from_fn(self.w, self.h, |x, y| self.usable[y * self.w + x]);
        PatchCode::from_parts((0, 0), planes, usable).unwrap()
    }

    fn area(&self) -> usize {
        self.usable.iter().filter(|&&u| u).count()
    }
}

/// Per-pixel counts with `b` placed so that its pixel (x - dx, y - dy) faces
/// pixel (x, y) of `a`.
fn naive_counts(a: &Raw, b: &Raw, dx: i64, dy: i64) -> (u64, usize) {
    let (mut diff, mut overlap) = (0u64, 0usize);
    for y in 0..a.h as i64 {
        for x in 0..a.w as i64 {
            let (xb, yb) = (x - dx, y - dy);
            if xb < 0 || yb < 0 || xb >= b.w as i64 || yb >= b.h as i64 {
                continue;
            }
            let ia = (y as usize) * a.w + x as usize;
            let ib = (yb as usize) * b.w + xb as usize;
            if !(a.usable[ia] && b.usable[ib]) {
                continue;
            }
            overlap += 1;
            for (pa, pb) in a.planes.iter().zip(&b.planes) {
                if pa[ia] != pb[ib] {
                    diff += 1;
                }
            }
        }
    }
    (diff, overlap)
}

/// Minimum distance and all minimizing offsets over every translation.
fn naive_alignment(a: &Raw, b: &Raw, frac: f64) -> Option<(f64, Vec<(i32, i32)>)> {
    let min_area = a.area().min(b.area()) as f64;
    let mut best: Option<(f64, Vec<(i32, i32)>)> = None;
    for dy in -13i64..=13 {
        for dx in -13i64..=13 {
            let (diff, overlap) = naive_counts(a, b, dx, dy);
            if !(overlap as f64 > frac * min_area) {
                continue;
            }
            let d = diff as f64 / (overlap as f64 * a.planes.len() as f64);
            let off = (dx as i32, dy as i32);
            match &mut best {
                Some((bd, offs)) if d == *bd => offs.push(off),
                Some((bd, _)) if d > *bd => {}
                _ => best = Some((d, vec![off])),
            }
        }
    }
    best
}

fn alignment_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let fracs = [0.0, 0.25, 0.5, 0.75];
    let (mut accepted, mut rejected) = (0, 0);
    let n = 1000;
    for case in 0..n {
        let planes = rng.random_range(1..=5);
        let ra = Raw::random(&mut rng, planes);
        let rb = Raw::random(&mut rng, planes);
        let frac = fracs[case % fracs.len()];
        let (a, b) = (ra.code(), rb.code());
        let scan = matching::alignment_scan(&a, &b, frac).map_err(|e| e.to_string())?;
        let got_offsets: Vec<(i32, i32)> = scan.minimizers.iter().map(|m| m.0).collect();
        let da = PatchDescriptor { id: "a".into(), code: a, centroid: (0.0, 0.0), angle: 0.0 };
        let db = PatchDescriptor { id: "b".into(), code: b, centroid: (0.0, 0.0), angle: 0.0 };
        let best = matching::best_alignment_distance(&da, &db, frac).map_err(|e| e.to_string())?;
        match (naive_alignment(&ra, &rb, frac), best) {
            (None, None) => {
                ensure(got_offsets.is_empty(), || format!("case {case}: rejected but offsets reported"))?;
                rejected += 1;
            }
            (Some((d, mut offs)), Some(m)) => {
                ensure(m.distance == d, || format!("case {case}: distance {} vs oracle {d}", m.distance))?;
                let mut got = got_offsets.clone();
                got.sort_unstable();
                offs.sort_unstable();
                ensure(got == offs, || format!("case {case}: offsets {got:?} vs oracle {offs:?}"))?;
                ensure(offs.contains(&m.offset), || format!("case {case}: chosen offset not a minimizer"))?;
                accepted += 1;
            }
            (oracle, got) => {
                return Err(format!(
                    "case {case}: rejection differs (oracle {}, fast {})",
                    if oracle.is_some() { "accepts" } else { "rejects" },
                    if got.is_some() { "accepts" } else { "rejects" },
                ))
            }
        }
    }
    Ok(format!("{n} random masks up to 12x12: {accepted} aligned, {rejected} rejected, all exact"))
}

fn packed_hamming() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let n = 1000;
    for case in 0..n {
        let planes = rng.random_range(1..=8);
        let ra = Raw::random(&mut rng, planes);
        let rb = Raw::random(&mut rng, planes);
        let dx = rng.random_range(-(rb.w as i32)..=ra.w as i32);
        let dy = rng.random_range(-(rb.h as i32)..=ra.h as i32);
        let h = bsif::hamming_masked(&ra.code(), &rb.code(), (dx, dy)).map_err(|e| e.to_string())?;
        let (diff, overlap) = naive_counts(&ra, &rb, dx as i64, dy as i64);
        ensure(h.differing_bits == diff && h.overlap_area == overlap, || {
            format!("case {case}: packed ({}, {}) vs per-pixel ({diff}, {overlap})", h.differing_bits, h.overlap_area)
        })?;
        let expect = (overlap > 0).then(|| diff as f64 / (overlap as f64 * planes as f64));
        ensure(h.distance == expect, || format!("case {case}: distance {:?} vs {expect:?}", h.distance))?;
    }
    Ok(format!("{n} random masked pairs, exact"))
}

fn pair_key(p: &MatchPair) -> (f64, &str, &str) {
    (p.distance, p.id_a.as_str(), p.id_b.as_str())
}

fn precedes(x: &MatchPair, y: &MatchPair) -> bool {
    let (a, b) = (pair_key(x), pair_key(y));
    a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

/// Repeatedly takes the smallest remaining pair whose patches are both free.
fn reference_greedy(pairs: &[MatchPair]) -> Vec<MatchPair> {
    let mut free: Vec<&MatchPair> = pairs.iter().collect();
    let mut out = Vec::new();
    while let Some(best) = free.iter().copied().reduce(|m, p| if precedes(p, m) { p } else { m }) {
        out.push(best.clone());
        free.retain(|p| p.id_a != best.id_a && p.id_b != best.id_b);
    }
    out
}

fn greedy_assignment() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 1000;
    for case in 0..n {
        let (na, nb) = (rng.random_range(1..=10), rng.random_range(1..=10));
        let mut all: Vec<(usize, usize)> = (0..na).flat_map(|i| (0..nb).map(move |j| (i, j))).collect();
        all.shuffle(&mut rng);
        all.truncate(rng.random_range(0..=64));
        let pairs: Vec<MatchPair> = all
            .into_iter()
            .map(|(i, j)| MatchPair {
                id_a: format!("a{i}"),
                id_b: format!("b{j}"),
                // Coarse values so that ties are common.
                distance: rng.random_range(0..8) as f64 / 16.0,
                offset: (0, 0),
                overlap_area: 1,
            })
            .collect();
        let got = matching::greedy_assign(&pairs);
        ensure(got == reference_greedy(&pairs), || format!("case {case}: differs from reference"))?;
        let ua: HashSet<_> = got.iter().map(|p| &p.id_a).collect();
        let ub: HashSet<_> = got.iter().map(|p| &p.id_b).collect();
        ensure(ua.len() == got.len() && ub.len() == got.len(), || format!("case {case}: not one-to-one"))?;
        ensure(got.windows(2).all(|w| precedes(&w[0], &w[1])), || format!("case {case}: selection not sorted"))?;
        for p in &pairs {
            if got.contains(p) {
                continue;
            }
            let blocked = got
                .iter()
                .any(|s| (s.id_a == p.id_a || s.id_b == p.id_b) && precedes(s, p));
            ensure(blocked, || format!("case {case}: {} {} skipped without an earlier conflict", p.id_a, p.id_b))?;
        }
    }
    Ok(format!("{n} random lists of up to 64 pairs agree with the reference"))
}

/// P(genuine < impostor) + P(tie) / 2 by binary search over sorted impostors.
fn mann_whitney(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut imp = impostor.to_vec();
    imp.sort_by(f64::total_cmp);
    let mut twice = 0u128;
    for &g in genuine {
        let below_or_eq = imp.partition_point(|&x| x <= g);
        let below = imp.partition_point(|&x| x < g);
        twice += 2 * (imp.len() - below_or_eq) as u128 + (below_or_eq - below) as u128;
    }
    twice as f64 / (2.0 * genuine.len() as f64 * impostor.len() as f64)
}

fn metric_sanity() -> Check {
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let gen = Normal::new(0.20, 0.05).unwrap();
    let imp = Normal::new(0.45, 0.05).unwrap();
    let mut records = Vec::with_capacity(2 * n);
    for k in 0..n {
        records.push(ScoreRecord {
            pair_id: format!("g{k}"),
            subject_a: format!("s{k}"),
            subject_b: format!("s{k}"),
            score: gen.sample(&mut rng),
            label: Label::Genuine,
            no_evidence: false,
        });
        records.push(ScoreRecord {
            pair_id: format!("i{k}"),
            subject_a: format!("s{k}"),
            subject_b: format!("t{k}"),
            score: imp.sample(&mut rng),
            label: Label::Impostor,
            no_evidence: false,
        });
    }
    let set = ScoreSet::new(records).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let curve = eval::roc(&set).map_err(|e| e.to_string())?;
    let auc = eval::auc(&curve);
    let eer = eval::eer(&curve);
    let dprime = eval::dprime(&set).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let expected_eer = StatNormal::new(0.0, 1.0).unwrap().cdf(-2.5);
    let mw = mann_whitney(&set.scores(Label::Genuine), &set.scores(Label::Impostor));
    ensure((dprime - 5.0).abs() <= 0.1, || format!("d' {dprime:.4}"))?;
    ensure((eer - expected_eer).abs() <= 0.01, || format!("EER {eer:.5} vs {expected_eer:.5}"))?;
    ensure((auc - mw).abs() <= 1e-9, || format!("AUC {auc} vs Mann-Whitney {mw}"))?;
    ensure(secs < 5.0, || format!("{secs:.2} s"))?;
    Ok(format!(
        "d' {dprime:.3}, EER {eer:.5} (normal {expected_eer:.5}), |AUC - MW| {:.1e}, {secs:.2} s",
        (auc - mw).abs()
    ))
}

fn synthetic_separation() -> Check {
    let p = SynthParams::default();
    let config = MatchConfig::default();
    let fallback = FallbackParams::default();
    let bank = bank();
    let n_ids = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut captures = Vec::new();
    for i in 0..n_ids {
        let id = synth::identity(i, 2025, &p).map_err(|e| e.to_string())?;
        for c in 0..2 {
            let img = synth::capture(&id, p.capture_noise, &mut rng).map_err(|e| e.to_string())?;
            let deg = if c == 0 { 0.0 } else { rng.random_range(-10.0..=10.0) };
            captures.push((id.subject_id.clone(), id.mask.clone(), img, deg));
        }
    }
    let start = Instant::now();
    let features = captures
        .par_iter()
        .map(|(subject, mask, img, deg)| {
            let dets = synth::detect_on_crop("c", subject, img, mask, config.crop_side, &config.clahe, &fallback, *deg)?;
            let sample = Sample { image: img, mask, detections: &dets };
            matching::extract_features(sample, &bank, &config)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let idx: Vec<(usize, usize)> = (0..captures.len())
        .flat_map(|i| (i + 1..captures.len()).map(move |j| (i, j)))
        .collect();
    let records = idx
        .par_iter()
        .map(|&(i, j)| {
            let r = matching::match_features(&features[i], &features[j], &config)?;
            let (sa, sb) = (&captures[i].0, &captures[j].0);
            Ok(ScoreRecord {
                pair_id: format!("{i}-{j}"),
                subject_a: sa.clone(),
                subject_b: sb.clone(),
                score: r.score,
                label: if sa == sb { Label::Genuine } else { Label::Impostor },
                no_evidence: r.no_evidence,
            })
        })
        .collect::<Result<Vec<_>, pbm_core::PbmError>>()
        .map_err(|e| e.to_string())?;
    let set = ScoreSet::new(records).map_err(|e| e.to_string())?;
    let (m, _) = eval::evaluate(&set).map_err(|e| e.to_string())?;
    let mean = |l| {
        let s = set.scores(l);
        s.iter().sum::<f64>() / s.len() as f64
    };
    let summary = format!(
        "{n_ids} identities, {} genuine / {} impostor, mean {:.3} vs {:.3}, AUC {:.4}, EER {:.3}, {:.1} s",
        m.n_genuine,
        m.n_impostor,
        mean(Label::Genuine),
        mean(Label::Impostor),
        m.auc,
        m.eer,
        start.elapsed().as_secs_f64()
    );
    ensure(m.auc >= 0.90, || summary.clone())?;
    Ok(summary)
}

fn random_polygon(rng: &mut impl Rng) -> Polygon {
    let cx = rng.random_range(4.0..60.0);
    let cy = rng.random_range(4.0..60.0);
    let n = rng.random_range(3..=7);
    let r = rng.random_range(2.0..18.0);
    // Star-shaped around the centre, so never self-intersecting.
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    Polygon(
        angles
            .into_iter()
            .map(|t| {
                let rr = r * rng.random_range(0.4..1.0);
                [(cx + rr * t.cos()).clamp(0.0, 63.0), (cy + rr * t.sin()).clamp(0.0, 63.0)]
            })
            .collect(),
    )
}

fn aggregation_fixpoint() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let n = 500;
    let (mut total_in, mut total_out) = (0, 0);
    for case in 0..n {
        let k = rng.random_range(1..=12);
        let masks: Vec<AnnotationMask> = (0..k)
            .filter_map(|i| {
                let poly = random_polygon(&mut rng);
                ShapeMask::rasterize(&poly, 64, 64).map(|mask| AnnotationMask { id: format!("r{i:02}"), mask })
            })
            .collect();
        let out = detection::aggregate_annotations(&masks);
        total_in += masks.len();
        total_out += out.len();
        let pixels: Vec<HashSet<(usize, usize)>> = out.iter().map(|a| a.mask.pixels().collect()).collect();
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                let inter = pixels[i].intersection(&pixels[j]).count();
                let smaller = pixels[i].len().min(pixels[j].len());
                ensure(inter as f64 / smaller as f64 <= 0.5, || {
                    format!("case {case}: {} and {} overlap {inter}/{smaller}", out[i].id, out[j].id)
                })?;
            }
        }
        ensure(detection::aggregate_annotations(&out) == out, || format!("case {case}: not a fixpoint"))?;
    }
    Ok(format!("{n} random polygon sets, {total_in} regions reduced to {total_out}, no violating pair"))
}

fn gate_boundary() -> Check {
    let code = PatchCode::from_parts((0, 0), vec![BitPlane::new(4, 4)], BitPlane::from_fn(4, 4, |_, _| true)).unwrap();
    let at = |id: &str, angle: f64| PatchDescriptor { id: id.into(), code: code.clone(), centroid: (0.0, 0.0), angle };
    let mut seen = Vec::new();
    for (base, sign) in [(0.0, 1.0), (170.0, 1.0), (-170.0, -1.0)] {
        for (diff, expect) in [(19.999, true), (20.0, true), (20.001, false)] {
            let mut other = base + sign * diff;
            if other > 180.0 {
                other -= 360.0;
            } else if other <= -180.0 {
                other += 360.0;
            }
            let (a, b) = (at("a", base), at("b", other));
            let gate = matching::angular_gate(&a, &b, 20.0);
            let pairs = matching::enumerate_valid_pairs(&[a], &[b], 20.0, 0.5).map_err(|e| e.to_string())?;
            ensure(gate == expect && pairs.is_empty() != expect, || {
                format!("{base} vs {other}: gate {gate}, {} candidates", pairs.len())
            })?;
            if base == 0.0 {
                seen.push(if gate { "pass" } else { "reject" });
            }
        }
    }
    Ok(format!("19.999 / 20 / 20.001 -> {}, also across +-180", seen.join(" / ")))
}

fn store_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let assets_dir = dir.path().join("assets");
    std::fs::create_dir(&assets_dir).map_err(|e| e.to_string())?;
    let p = SynthParams {
        width: 80,
        height: 80,
        pupil_radius: 6.0,
        iris_radius: 30.0,
        blur_radius: 1,
        capture_noise: 4.0,
    };
    let config = MatchConfig {
        crop_side: 64,
        clahe: ClaheParams {
            tile_grid: (4, 4),
            clip_limit: 2.0,
        },
        ..MatchConfig::default()
    };
    let fallback = FallbackParams { k: 6, window: 12, max_overlap: 0.3 };
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut sides: Vec<[SideAssets; 2]> = Vec::new();
    for i in 0..10 {
        let id = synth::identity(i, 5, &p).map_err(|e| e.to_string())?;
        let mut pair = Vec::new();
        for c in 0..2 {
            let img = synth::capture(&id, p.capture_noise, &mut rng).map_err(|e| e.to_string())?;
            let name = format!("{}_{c}", id.subject_id);
            let mut dets = synth::detect_on_crop(&name, &id.subject_id, &img, &id.mask, 64, &config.clahe, &fallback, 0.0)
                .map_err(|e| e.to_string())?;
            dets.pmi_hours = 10.0 + 50.0 * c as f64;
            img.save_png(assets_dir.join(format!("{name}.png"))).map_err(|e| e.to_string())?;
            id.mask.save_png(assets_dir.join(format!("{name}_mask.png"))).map_err(|e| e.to_string())?;
            dets.save(assets_dir.join(format!("{name}.json"))).map_err(|e| e.to_string())?;
            pair.push(SideAssets {
                image: format!("{name}.png"),
                mask: format!("{name}_mask.png"),
                detections: format!("{name}.json"),
            });
        }
        sides.push([pair[0].clone(), pair[1].clone()]);
    }
    let log = dir.path().join("log.ndjson");
    let store = Store::open(&log, Box::new(StepClock::default())).map_err(|e| e.to_string())?;
    let app = App::new(
        store,
        ServiceConfig {
            asset_dir: assets_dir,
            seed: 7,
            match_config: config,
            bank: FilterBank::placeholder(3, 5, 2).unwrap(),
            pool_filter: PoolFilter::default(),
        },
    )
    .map_err(|e| e.to_string())?;
    for (i, s) in sides.iter().enumerate() {
        let reg = PairRegistration { pair_id: format!("g{i:02}"), a: s[0].clone(), b: s[1].clone() };
        app.register_pair(reg).map_err(|e| e.to_string())?;
        for (j, t) in sides.iter().enumerate().skip(i + 1) {
            let reg = PairRegistration { pair_id: format!("i{i:02}_{j:02}"), a: s[0].clone(), b: t[0].clone() };
            app.register_pair(reg).map_err(|e| e.to_string())?;
        }
    }
    let stats = simulate::run(&app, &mut rng, 1000);
    let live = app.store.read(|i| i.canonical_json());
    let replayed = replay(&log).map_err(|e| e.to_string())?.canonical_json();
    ensure(live == replayed, || "replayed index differs from live index".into())?;
    let reopened = Store::open(&log, Box::new(StepClock::default())).map_err(|e| e.to_string())?;
    ensure(reopened.read(|i| i.canonical_json()) == live, || "reopened store differs".into())?;
    let ops: Vec<String> = stats.iter().map(|(k, (ok, no))| format!("{k} {ok}/{no}")).collect();
    Ok(format!("1000 operations ({}), {} bytes identical", ops.join(", "), live.len()))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 9] = [
        ("identity match", identity_match),
        ("alignment oracle", alignment_oracle),
        ("packed hamming", packed_hamming),
        ("greedy assignment", greedy_assignment),
        ("metric sanity", metric_sanity),
        ("synthetic separation", synthetic_separation),
        ("aggregation fixpoint", aggregation_fixpoint),
        ("gate boundary", gate_boundary),
        ("store replay", store_replay),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name:<22} {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<22} {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", checks.len());
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
