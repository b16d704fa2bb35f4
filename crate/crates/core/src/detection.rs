//! Patch detections: polygon ingestion and rasterization, annotation
//! aggregation, patch geometry, and a texture-variance fallback detector.
//!
//! Coordinates: polygon vertices are continuous, with pixel `(i, j)` covering
//! `[i, i+1) × [j, j+1)`. A pixel belongs to a polygon when its centre
//! `(i + 0.5, j + 0.5)` is inside under the even-odd rule. Centroids are
//! reported in pixel-index coordinates, matching [`crate::imaging::mask_centroid`].

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PbmError, Result};
use crate::imaging::{GrayImage, IrisMask};

/// Schema for the detection interchange file.
pub const DETECTION_SCHEMA: &str = include_str!("../schema/detections.schema.json");

/// A polygon as an ordered vertex list, serialized as `[[x, y], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon(pub Vec<[f64; 2]>);

impl Polygon {
    pub fn rect(x: f64, y: f64, w: f64, h: f64) -> Self {
        Polygon(vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Even-odd point test.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let v = &self.0;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let ([xi, yi], [xj, yj]) = (v[i], v[j]);
            if (yi > py) != (yj > py) {
                let x = xi + (py - yi) * (xj - xi) / (yj - yi);
                if px < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Rotates every vertex about `center` by `degrees` (positive turns +x
    /// toward +y).
    pub fn rotated(&self, center: (f64, f64), degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Polygon(
            self.0
                .iter()
                .map(|&[x, y]| {
                    let (dx, dy) = (x - center.0, y - center.1);
                    [center.0 + c * dx - s * dy, center.1 + s * dx + c * dy]
                })
                .collect(),
        )
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        self.0.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), &[x, y]| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        )
    }
}

/// Binary shape stored over its bounding box, positioned in a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeMask {
    origin: (usize, usize),
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ShapeMask {
    pub fn new(origin: (usize, usize), width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(PbmError::InvalidParameter(format!(
                "shape buffer has {} entries, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self {
            origin,
            width,
            height,
            bits,
        })
    }

    /// Rasterizes `polygon` into a `frame_w`×`frame_h` frame. Returns `None`
    /// if no pixel centre falls inside.
    pub fn rasterize(polygon: &Polygon, frame_w: usize, frame_h: usize) -> Option<Self> {
        if polygon.len() < 3 || frame_w == 0 || frame_h == 0 {
            return None;
        }
        let (bx0, by0, bx1, by1) = polygon.bounds();
        let x_lo = (bx0.floor().max(0.0) as usize).min(frame_w);
        let y_lo = (by0.floor().max(0.0) as usize).min(frame_h);
        let x_hi = (bx1.ceil().max(0.0) as usize).min(frame_w);
        let y_hi = (by1.ceil().max(0.0) as usize).min(frame_h);
        let mut pixels = Vec::new();
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                if polygon.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    pixels.push((x, y));
                }
            }
        }
        Self::from_pixels(&pixels)
    }

    /// Builds the tight shape around a list of frame pixels.
    pub fn from_pixels(pixels: &[(usize, usize)]) -> Option<Self> {
        let x0 = pixels.iter().map(|p| p.0).min()?;
        let y0 = pixels.iter().map(|p| p.1).min()?;
        let x1 = pixels.iter().map(|p| p.0).max()?;
        let y1 = pixels.iter().map(|p| p.1).max()?;
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut bits = vec![false; w * h];
        for &(x, y) in pixels {
            bits[(y - y0) * w + (x - x0)] = true;
        }
        Some(Self {
            origin: (x0, y0),
            width: w,
            height: h,
            bits,
        })
    }

    pub fn rect(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self {
            origin: (x0, y0),
            width: w,
            height: h,
            bits: vec![true; w * h],
        }
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Local (bounding-box) lookup.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Frame-coordinate lookup.
    pub fn contains(&self, fx: usize, fy: usize) -> bool {
        let (x0, y0) = self.origin;
        fx >= x0 && fy >= y0 && fx < x0 + self.width && fy < y0 + self.height && self.get(fx - x0, fy - y0)
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (x0, y0) = self.origin;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (x0 + i % self.width, y0 + i / self.width))
    }

    pub fn intersection_area(&self, other: &Self) -> usize {
        let x_lo = self.origin.0.max(other.origin.0);
        let y_lo = self.origin.1.max(other.origin.1);
        let x_hi = (self.origin.0 + self.width).min(other.origin.0 + other.width);
        let y_hi = (self.origin.1 + self.height).min(other.origin.1 + other.height);
        let mut n = 0;
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                if self.contains(x, y) && other.contains(x, y) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Centroid in frame pixel-index coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (x, y) in self.pixels() {
            sx += x as f64;
            sy += y as f64;
            n += 1.0;
        }
        (sx / n, sy / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Eye {
    L,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    Model,
    Human,
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDetection {
    pub id: String,
    pub polygon: Polygon,
    pub shape_mask: ShapeMask,
    pub confidence: f64,
    pub source: DetectionSource,
}

impl PatchDetection {
    /// Validates and rasterizes one detection in a `width`×`height` frame.
    pub fn new(
        id: impl Into<String>,
        polygon: Polygon,
        confidence: f64,
        source: DetectionSource,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let id = id.into();
        if polygon.len() < 3 {
            return Err(PbmError::DegeneratePolygon(id));
        }
        for &[x, y] in polygon.vertices() {
            let inside = x.is_finite()
                && y.is_finite()
                && (0.0..=width as f64).contains(&x)
                && (0.0..=height as f64).contains(&y);
            if !inside {
                return Err(PbmError::VertexOutOfBounds {
                    id,
                    x,
                    y,
                    width,
                    height,
                });
            }
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(PbmError::Schema(format!(
                "confidence {confidence} of {id} outside [0, 1]"
            )));
        }
        let shape_mask = ShapeMask::rasterize(&polygon, width, height).ok_or_else(|| {
            PbmError::Schema(format!("polygon of {id} covers no pixel centre"))
        })?;
        Ok(Self {
            id,
            polygon,
            shape_mask,
            confidence,
            source,
        })
    }

    pub fn centroid(&self) -> (f64, f64) {
        self.shape_mask.centroid()
    }
}

/// Detections for one cropped iris image plus sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub image_id: String,
    pub subject_id: String,
    pub eye: Eye,
    pub pmi_hours: f64,
    pub width: usize,
    pub height: usize,
    pub detections: Vec<PatchDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionFile {
    image_id: String,
    subject_id: String,
    eye: Eye,
    pmi_hours: f64,
    width: usize,
    height: usize,
    detections: Vec<DetectionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionEntry {
    id: String,
    polygon: Polygon,
    confidence: f64,
    source: DetectionSource,
}

impl DetectionSet {
    pub fn new(
        image_id: impl Into<String>,
        subject_id: impl Into<String>,
        eye: Eye,
        pmi_hours: f64,
        width: usize,
        height: usize,
        detections: Vec<PatchDetection>,
    ) -> Result<Self> {
        let set = Self {
            image_id: image_id.into(),
            subject_id: subject_id.into(),
            eye,
            pmi_hours,
            width,
            height,
            detections,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pmi_hours >= 0.0) || !self.pmi_hours.is_finite() {
            return Err(PbmError::Schema(format!(
                "pmi_hours must be a finite value >= 0, got {}",
                self.pmi_hours
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(PbmError::Schema("frame width and height must be > 0".into()));
        }
        let mut seen = HashSet::new();
        for det in &self.detections {
            if !seen.insert(det.id.as_str()) {
                return Err(PbmError::DuplicateId(det.id.clone()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DetectionFile =
            serde_json::from_str(text).map_err(|e| PbmError::Schema(e.to_string()))?;
        let detections = file
            .detections
            .into_iter()
            .map(|d| {
                PatchDetection::new(d.id, d.polygon, d.confidence, d.source, file.width, file.height)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            file.image_id,
            file.subject_id,
            file.eye,
            file.pmi_hours,
            file.width,
            file.height,
            detections,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DetectionFile {
            image_id: self.image_id.clone(),
            subject_id: self.subject_id.clone(),
            eye: self.eye,
            pmi_hours: self.pmi_hours,
            width: self.width,
            height: self.height,
            detections: self
                .detections
                .iter()
                .map(|d| DetectionEntry {
                    id: d.id.clone(),
                    polygon: d.polygon.clone(),
                    confidence: d.confidence,
                    source: d.source,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| PbmError::io(path, e))
    }

    /// Keeps the `n` most confident detections (ties by id), preserving order.
    pub fn top_n(&self, n: usize) -> Self {
        let mut ranked: Vec<&PatchDetection> = self.detections.iter().collect();
        ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.id.cmp(&b.id)));
        let keep: HashSet<&str> = ranked.iter().take(n).map(|d| d.id.as_str()).collect();
        Self {
            detections: self
                .detections
                .iter()
                .filter(|d| keep.contains(d.id.as_str()))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

pub fn parse_detections(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PbmError::io(path, e))?;
    DetectionSet::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationRole {
    Matching,
    Nonmatching,
}

/// One human annotation on an image pair. A matching annotation links
/// `polygons_a[link.0]` with `polygons_b[link.1]`; a non-matching annotation
/// marks exactly one region on either image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub pair_id: String,
    pub role: AnnotationRole,
    #[serde(default)]
    pub polygons_a: Vec<Polygon>,
    #[serde(default)]
    pub polygons_b: Vec<Polygon>,
    #[serde(default)]
    pub link: Option<(usize, usize)>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PbmError::InvalidAnnotation(msg.to_string()));
        if self
            .polygons_a
            .iter()
            .chain(&self.polygons_b)
            .any(|p| p.len() < 3)
        {
            return bad("polygon with fewer than 3 vertices");
        }
        match self.role {
            AnnotationRole::Matching => match self.link {
                Some((ia, ib)) if ia < self.polygons_a.len() && ib < self.polygons_b.len() => Ok(()),
                Some(_) => bad("link refers to a missing polygon"),
                None => bad("matching annotation without a link"),
            },
            AnnotationRole::Nonmatching => {
                if self.link.is_some() {
                    bad("non-matching annotation carries a link")
                } else if self.polygons_a.len() + self.polygons_b.len() != 1 {
                    bad("non-matching annotation must carry exactly one polygon")
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// A labelled annotation region used for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMask {
    pub id: String,
    pub mask: ShapeMask,
}

/// Collapses redundant annotations: whenever two regions overlap by more than
/// half of the smaller one's area, the smaller region is dropped (equal areas:
/// the later id is dropped). Survivors keep their input order.
///
/// Regions are visited by decreasing area, so each removal is charged to a
/// larger region that is itself kept; the result has no violating pair.
pub fn aggregate_annotations(annotations: &[AnnotationMask]) -> Vec<AnnotationMask> {
    let areas: Vec<usize> = annotations.iter().map(|a| a.mask.area()).collect();
    let mut order: Vec<usize> = (0..annotations.len()).collect();
    order.sort_by(|&i, &j| {
        areas[j]
            .cmp(&areas[i])
            .then_with(|| annotations[i].id.cmp(&annotations[j].id))
            .then_with(|| i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let violates = kept.iter().any(|&k| {
            let inter = annotations[i].mask.intersection_area(&annotations[k].mask);
            2 * inter > areas[i].min(areas[k])
        });
        if !violates {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| annotations[i].clone()).collect()
}

/// Angle in degrees of `point - center` (x right, y down), in (−180, 180].
pub fn angle_about(point: (f64, f64), center: (f64, f64)) -> Result<f64> {
    let (dx, dy) = (point.0 - center.0, point.1 - center.1);
    if dx == 0.0 && dy == 0.0 {
        return Err(PbmError::CoincidentCenter);
    }
    let deg = dy.atan2(dx).to_degrees();
    Ok(if deg <= -180.0 { deg + 360.0 } else { deg })
}

pub fn patch_angle(det: &PatchDetection, iris_center: (f64, f64)) -> Result<f64> {
    angle_about(det.centroid(), iris_center)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallbackParams {
    pub k: usize,
    pub window: usize,
    /// Maximum fraction of a window that may be covered by a kept window.
    pub max_overlap: f64,
}

impl Default for FallbackParams {
    fn default() -> Self {
        Self {
            k: 10,
            window: 32,
            max_overlap: 0.3,
        }
    }
}

/// A scored candidate window of the fallback detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredWindow {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Every grid window (step `window / 2`) lying fully inside the mask, scored
/// by the standard deviation of its intensities.
pub fn candidate_windows(img: &GrayImage, mask: &IrisMask, window: usize) -> Result<Vec<ScoredWindow>> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(PbmError::DimensionMismatch {
            expected_w: img.width(),
            expected_h: img.height(),
            got_w: mask.width(),
            got_h: mask.height(),
        });
    }
    if window < 4 {
        return Err(PbmError::InvalidParameter("window must be >= 4".into()));
    }
    let step = window / 2;
    let mut out = Vec::new();
    let mut y = 0;
    while y + window <= img.height() {
        let mut x = 0;
        while x + window <= img.width() {
            let inside = (y..y + window).all(|yy| (x..x + window).all(|xx| mask.get(xx, yy)));
            if inside {
                let n = (window * window) as f64;
                let (mut s, mut s2) = (0.0, 0.0);
                for yy in y..y + window {
                    for xx in x..x + window {
                        let v = img.get(xx, yy) as f64;
                        s += v;
                        s2 += v * v;
                    }
                }
                let mean = s / n;
                let var = (s2 / n - mean * mean).max(0.0);
                out.push(ScoredWindow {
                    x,
                    y,
                    score: var.sqrt(),
                });
            }
            x += step;
        }
        y += step;
    }
    Ok(out)
}

/// Non-learned stand-in for the patch detector: highest-variance windows
/// with greedy non-maximum suppression.
pub fn fallback_detect(img: &GrayImage, mask: &IrisMask, params: &FallbackParams) -> Result<Vec<PatchDetection>> {
    if params.k == 0 {
        return Err(PbmError::InvalidParameter("k must be >= 1".into()));
    }
    let mut cands = candidate_windows(img, mask, params.window)?;
    if cands.is_empty() {
        return Err(PbmError::NoCandidateWindow(params.window));
    }
    cands.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| (a.y, a.x).cmp(&(b.y, b.x)))
    });
    let max_score = cands[0].score;
    let w = params.window;
    let limit = params.max_overlap * (w * w) as f64;
    let mut kept: Vec<ScoredWindow> = Vec::new();
    for c in cands {
        if kept.len() == params.k {
            break;
        }
        let suppressed = kept.iter().any(|k| {
            let ix = (k.x + w).min(c.x + w).saturating_sub(k.x.max(c.x));
            let iy = (k.y + w).min(c.y + w).saturating_sub(k.y.max(c.y));
            (ix * iy) as f64 > limit
        });
        if !suppressed {
            kept.push(c);
        }
    }
    kept.iter()
        .enumerate()
        .map(|(i, c)| {
            let confidence = if max_score > 0.0 { c.score / max_score } else { 0.0 };
            PatchDetection::new(
                format!("fb{i:02}"),
                Polygon::rect(c.x as f64, c.y as f64, w as f64, w as f64),
                confidence,
                DetectionSource::Fallback,
                img.width(),
                img.height(),
            )
        })
        .collect()
}
