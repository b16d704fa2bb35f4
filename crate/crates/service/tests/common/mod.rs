#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use pbm_core::bsif::FilterBank;
use pbm_core::detection::{AnnotationRecord, AnnotationRole, FallbackParams, Polygon};
use pbm_core::imaging::ClaheParams;
use pbm_core::matching::MatchConfig;
use pbm_core::synth::{self, SynthParams};
use pbm_service::store::{SideAssets, StepClock, Store};
use pbm_service::workflow::{PairRegistration, PoolFilter};
use pbm_service::{App, ServiceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const SIDE: usize = 64;

pub fn small_params() -> SynthParams {
    SynthParams {
        width: 80,
        height: 80,
        pupil_radius: 6.0,
        iris_radius: 30.0,
        blur_radius: 1,
        capture_noise: 4.0,
    }
}

pub fn match_config() -> MatchConfig {
    MatchConfig {
        crop_side: SIDE,
        clahe: ClaheParams {
            tile_grid: (4, 4),
            clip_limit: 2.0,
        },
        ..MatchConfig::default()
    }
}

/// Writes two captures of each of `n` identities; returns their relative
/// asset paths as `assets[identity][capture]`.
pub fn write_assets(dir: &Path, n: usize) -> Vec<[SideAssets; 2]> {
    let p = small_params();
    let config = match_config();
    let fallback = FallbackParams {
        k: 6,
        window: 12,
        max_overlap: 0.3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();
    for i in 0..n {
        let id = synth::identity(i, 5, &p).unwrap();
        let mut sides = Vec::new();
        for c in 0..2 {
            let img = synth::capture(&id, p.capture_noise, &mut rng).unwrap();
            let name = format!("{}_{c}", id.subject_id);
            let mut dets = synth::detect_on_crop(&name, &id.subject_id, &img, &id.mask, SIDE, &config.clahe, &fallback, 0.0)
                .unwrap();
            dets.pmi_hours = 10.0 + 50.0 * c as f64;
            img.save_png(dir.join(format!("{name}.png"))).unwrap();
            id.mask.save_png(dir.join(format!("{name}_mask.png"))).unwrap();
            dets.save(dir.join(format!("{name}.json"))).unwrap();
            sides.push(SideAssets {
                image: format!("{name}.png"),
                mask: format!("{name}_mask.png"),
                detections: format!("{name}.json"),
            });
        }
        out.push([sides[0].clone(), sides[1].clone()]);
    }
    out
}

pub fn service_config(dir: &Path, seed: u64) -> ServiceConfig {
    ServiceConfig {
        asset_dir: dir.to_path_buf(),
        seed,
        match_config: match_config(),
        bank: FilterBank::placeholder(3, 5, 2).unwrap(),
        pool_filter: PoolFilter::default(),
    }
}

/// Registrations for every genuine pair and every cross-identity pair of
/// first captures.
pub fn registrations(assets: &[[SideAssets; 2]]) -> Vec<PairRegistration> {
    let mut regs = Vec::new();
    for (i, a) in assets.iter().enumerate() {
        regs.push(PairRegistration {
            pair_id: format!("g{i:02}"),
            a: a[0].clone(),
            b: a[1].clone(),
        });
    }
    for i in 0..assets.len() {
        for j in i + 1..assets.len() {
            regs.push(PairRegistration {
                pair_id: format!("i{i:02}_{j:02}"),
                a: assets[i][0].clone(),
                b: assets[j][0].clone(),
            });
        }
    }
    regs
}

pub struct Fixture {
    pub dir: TempDir,
    pub app: Arc<App>,
}

impl Fixture {
    pub fn log_path(&self) -> std::path::PathBuf {
        self.dir.path().join("log.ndjson")
    }
}

/// An app over a fresh asset tree with `n` identities registered.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let dir = TempDir::new().unwrap();
    let assets_dir = dir.path().join("assets");
    std::fs::create_dir(&assets_dir).unwrap();
    let assets = write_assets(&assets_dir, n);
    let store = Store::open(dir.path().join("log.ndjson"), Box::new(StepClock::default())).unwrap();
    let app = App::new(store, service_config(&assets_dir, seed)).unwrap();
    for r in registrations(&assets) {
        app.register_pair(r).unwrap();
    }
    Fixture {
        dir,
        app: Arc::new(app),
    }
}

fn tri(x: f64) -> Polygon {
    Polygon(vec![[x, 1.0], [x + 4.0, 1.0], [x, 5.0]])
}

pub fn matching_annotation(annotator: &str, pair: &str) -> AnnotationRecord {
    AnnotationRecord {
        annotator_id: annotator.into(),
        pair_id: pair.into(),
        role: AnnotationRole::Matching,
        polygons_a: vec![tri(1.0)],
        polygons_b: vec![tri(2.0)],
        link: Some((0, 0)),
    }
}

pub fn nonmatching_annotation(annotator: &str, pair: &str) -> AnnotationRecord {
    AnnotationRecord {
        annotator_id: annotator.into(),
        pair_id: pair.into(),
        role: AnnotationRole::Nonmatching,
        polygons_a: vec![tri(3.0)],
        polygons_b: vec![],
        link: None,
    }
}
