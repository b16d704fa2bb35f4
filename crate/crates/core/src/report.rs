//! SVG match evidence: detections over the crop, and side-by-side comparisons
//! with linked matched patches.

use std::collections::HashMap;
use std::fmt::Write as _;

use base64::Engine as _;

use crate::detection::{PatchDetection, Polygon};
use crate::error::{PbmError, Result};
use crate::imaging::GrayImage;
use crate::matching::{ComparisonResult, FeatureSummary};

pub const DETECTION_COLOR: &str = "#00FFFF";
pub const LINK_COLOR: &str = "#00008B";
const MATCHED_FILL: &str = "#00FFFF";
const GAP: usize = 16;
const CAPTION_H: usize = 28;
const FOOTER_H: usize = 22;
const FONT: &str = "font-family=\"monospace\" font-size=\"12\"";

fn png_data_uri(img: &GrayImage) -> Result<String> {
    let png = img.encode_png()?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    ))
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn points_attr(poly: &Polygon, dx: f64, dy: f64) -> String {
    poly.vertices()
        .iter()
        .map(|[x, y]| format!("{},{}", fmt_num(x + dx), fmt_num(y + dy)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn check_on_canvas(id: &str, poly: &Polygon, w: usize, h: usize) -> Result<()> {
    for &[x, y] in poly.vertices() {
        if !(0.0..=w as f64).contains(&x) || !(0.0..=h as f64).contains(&y) {
            return Err(PbmError::VertexOutOfBounds {
                id: id.to_string(),
                x,
                y,
                width: w,
                height: h,
            });
        }
    }
    Ok(())
}

/// Detected patches outlined in cyan over the (cropped) image.
pub fn render_detections(img: &GrayImage, detections: &[PatchDetection]) -> Result<String> {
    let (w, h) = (img.width(), img.height());
    for d in detections {
        check_on_canvas(&d.id, &d.polygon, w, h)?;
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(
        out,
        "  <image class=\"backdrop\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" href=\"{}\"/>",
        png_data_uri(img)?
    );
    for d in detections {
        let _ = writeln!(
            out,
            "  <polygon class=\"detection\" data-id=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{DETECTION_COLOR}\" stroke-width=\"1.5\"/>",
            escape(&d.id),
            points_attr(&d.polygon, 0.0, 0.0)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Cuts the display crop out of an original image using the offset recorded
/// in a comparison result; pixels outside the source are black.
pub fn crop_for_display(img: &GrayImage, offset: (i64, i64), side: usize) -> Result<GrayImage> {
    GrayImage::from_fn(side, side, |x, y| {
        let sx = offset.0 + x as i64;
        let sy = offset.1 + y as i64;
        if sx >= 0 && sy >= 0 && (sx as usize) < img.width() && (sy as usize) < img.height() {
            img.get(sx as usize, sy as usize)
        } else {
            0
        }
    })
}

fn side_panel(
    out: &mut String,
    label: &str,
    img: &GrayImage,
    features: &[FeatureSummary],
    matched: &HashMap<&str, usize>,
    dx: usize,
) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let _ = writeln!(out, "  <g class=\"side side-{label}\" transform=\"translate({dx},{CAPTION_H})\">");
    let _ = writeln!(
        out,
        "    <image class=\"backdrop\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" href=\"{}\"/>",
        png_data_uri(img)?
    );
    for f in features {
        check_on_canvas(&f.id, &f.polygon, w, h)?;
        let pts = points_attr(&f.polygon, 0.0, 0.0);
        match matched.get(f.id.as_str()) {
            Some(rank) => {
                let _ = writeln!(
                    out,
                    "    <polygon class=\"detection matched\" data-id=\"{}\" data-pair=\"{rank}\" points=\"{pts}\" fill=\"{MATCHED_FILL}\" fill-opacity=\"0.25\" stroke=\"{DETECTION_COLOR}\" stroke-width=\"2\"/>",
                    escape(&f.id)
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "    <polygon class=\"detection\" data-id=\"{}\" points=\"{pts}\" fill=\"none\" stroke=\"{DETECTION_COLOR}\" stroke-width=\"1\" stroke-opacity=\"0.6\"/>",
                    escape(&f.id)
                );
            }
        }
    }
    out.push_str("  </g>\n");
    Ok(())
}

/// Both crops side by side, matched patches highlighted and linked in dark
/// blue between their usable-pixel centroids. Images must be the crops the
/// comparison ran on (see [`crop_for_display`]).
pub fn render_comparison(result: &ComparisonResult, img_a: &GrayImage, img_b: &GrayImage) -> Result<String> {
    let side = result.params.crop_side;
    for img in [img_a, img_b] {
        if img.width() != side || img.height() != side {
            return Err(PbmError::DimensionMismatch {
                expected_w: side,
                expected_h: side,
                got_w: img.width(),
                got_h: img.height(),
            });
        }
    }
    let index = |fs: &[FeatureSummary]| -> HashMap<String, usize> {
        fs.iter().enumerate().map(|(i, f)| (f.id.clone(), i)).collect()
    };
    let (idx_a, idx_b) = (index(&result.features_a), index(&result.features_b));
    let mut matched_a = HashMap::new();
    let mut matched_b = HashMap::new();
    let mut links = Vec::new();
    for (rank, p) in result.pairs.iter().enumerate() {
        let fa = idx_a
            .get(&p.id_a)
            .map(|&i| &result.features_a[i])
            .ok_or_else(|| PbmError::Render(format!("pair {rank} references unknown patch {} in A", p.id_a)))?;
        let fb = idx_b
            .get(&p.id_b)
            .map(|&i| &result.features_b[i])
            .ok_or_else(|| PbmError::Render(format!("pair {rank} references unknown patch {} in B", p.id_b)))?;
        matched_a.insert(fa.id.as_str(), rank);
        matched_b.insert(fb.id.as_str(), rank);
        links.push((rank, fa, fb, p.distance));
    }

    let width = 2 * side + GAP;
    let height = CAPTION_H + side + FOOTER_H;
    let bx = side + GAP;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(out, "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#FFFFFF\"/>");
    let caption = if result.no_evidence {
        format!("score {:.4} (no evidence: no patch pairs passed the gates)", result.score)
    } else {
        format!("score {:.4} from {} matched pairs", result.score, result.pairs.len())
    };
    let _ = writeln!(out, "  <text class=\"caption\" x=\"4\" y=\"18\" {FONT}>{}</text>", escape(&caption));
    side_panel(&mut out, "a", img_a, &result.features_a, &matched_a, 0)?;
    side_panel(&mut out, "b", img_b, &result.features_b, &matched_b, bx)?;
    for (rank, fa, fb, distance) in links {
        let _ = writeln!(
            out,
            "  <line class=\"link\" data-pair=\"{rank}\" data-a=\"{}\" data-b=\"{}\" data-distance=\"{distance:.4}\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{LINK_COLOR}\" stroke-width=\"2\"/>",
            escape(&fa.id),
            escape(&fb.id),
            fmt_num(fa.centroid.0 + 0.5),
            fmt_num(fa.centroid.1 + 0.5 + CAPTION_H as f64),
            fmt_num(fb.centroid.0 + 0.5 + bx as f64),
            fmt_num(fb.centroid.1 + 0.5 + CAPTION_H as f64),
        );
    }
    let p = &result.params;
    let footer = format!(
        "angle tol {} deg | max pairs {} | overlap frac {} | crop {} | CLAHE {}x{} clip {} | candidates {}",
        p.angle_tol_deg,
        p.max_pairs,
        p.overlap_frac,
        p.crop_side,
        p.clahe.tile_grid.0,
        p.clahe.tile_grid.1,
        p.clahe.clip_limit,
        result.n_candidates
    );
    let _ = writeln!(
        out,
        "  <text class=\"footer\" x=\"4\" y=\"{}\" {FONT}>{}</text>",
        CAPTION_H + side + 16,
        escape(&footer)
    );
    out.push_str("</svg>\n");
    Ok(out)
}
