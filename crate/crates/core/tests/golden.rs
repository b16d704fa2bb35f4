use std::path::PathBuf;

use pbm_core::bsif::FilterBank;
use pbm_core::detection::{DetectionSet, DetectionSource, Eye, PatchDetection, Polygon};
use pbm_core::imaging::{GrayImage, IrisMask};
use pbm_core::matching::{compare, MatchConfig, Sample};
use pbm_core::report;

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against the stored file; set `PBM_UPDATE_GOLDEN=1` to rewrite it.
fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("PBM_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from golden output");
}

fn fixture() -> (GrayImage, IrisMask, DetectionSet) {
    let img = GrayImage::from_fn(64, 64, |x, y| ((x * 37 + y * 91 + (x * y) % 13 * 17) % 256) as u8).unwrap();
    let mask = IrisMask::filled(64, 64, true).unwrap();
    let det = |id: &str, x: f64, y: f64| {
        PatchDetection::new(id, Polygon::rect(x, y, 12.0, 12.0), 0.8, DetectionSource::Model, 64, 64).unwrap()
    };
    let dets = DetectionSet::new(
        "fixture",
        "s0",
        Eye::R,
        10.0,
        64,
        64,
        vec![det("p0", 10.0, 10.0), det("p1", 40.0, 12.0), det("p2", 12.0, 40.0), det("p3", 38.0, 38.0)],
    )
    .unwrap();
    (img, mask, dets)
}

#[test]
fn comparison_svg_matches_golden() {
    let (img, mask, dets) = fixture();
    let config = MatchConfig {
        crop_side: 64,
        ..MatchConfig::default()
    };
    let bank = FilterBank::placeholder(3, 5, 1).unwrap();
    let s = Sample {
        image: &img,
        mask: &mask,
        detections: &dets,
    };
    let r = compare(s, s, &bank, &config).unwrap();
    assert_eq!(r.pairs.len(), 4);
    let crop = report::crop_for_display(&img, r.crop_offset_a, 64).unwrap();
    let svg = report::render_comparison(&r, &crop, &crop).unwrap();
    check_golden("comparison.svg", &svg);
}

#[test]
fn detections_svg_matches_golden() {
    let (img, _, dets) = fixture();
    let svg = report::render_detections(&img, &dets.detections).unwrap();
    check_golden("detections.svg", &svg);
}
