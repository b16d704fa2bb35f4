//! Procedural iris-like samples for tests, demos and the end-to-end
//! separation check. Nothing here is used by the matching pipeline itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::detection::{DetectionSet, DetectionSource, Eye, FallbackParams, PatchDetection};
use crate::error::Result;
use crate::imaging::{self, ClaheParams, GrayImage, IrisMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub pupil_radius: f64,
    pub iris_radius: f64,
    /// Box-blur radius applied to the white noise that forms the texture.
    pub blur_radius: usize,
    /// Standard deviation of the per-capture additive noise (grey levels).
    pub capture_noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 300,
            height: 280,
            pupil_radius: 32.0,
            iris_radius: 112.0,
            blur_radius: 2,
            capture_noise: 6.0,
        }
    }
}

/// One synthetic eye: a fixed texture and annular mask.
#[derive(Debug, Clone)]
pub struct Identity {
    pub subject_id: String,
    pub texture: GrayImage,
    pub mask: IrisMask,
}

fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut n) = (0.0, 0.0);
                let c = if horizontal { x } else { y };
                let lim = if horizontal { w } else { h };
                for k in c.saturating_sub(r)..(c + r + 1).min(lim) {
                    acc += if horizontal { src[y * w + k] } else { src[k * w + x] };
                    n += 1.0;
                }
                out[y * w + x] = acc / n;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Annular mask centred on the image.
pub fn annulus_mask(p: &SynthParams) -> Result<IrisMask> {
    let (cx, cy) = (p.width as f64 / 2.0, p.height as f64 / 2.0);
    IrisMask::from_fn(p.width, p.height, |x, y| {
        let r = (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy);
        r >= p.pupil_radius && r <= p.iris_radius
    })
}

pub fn identity(index: usize, seed: u64, p: &SynthParams) -> Result<Identity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (w, h) = (p.width, p.height);
    let noise: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(&mut rng)).collect();
    let fine = box_blur(&noise, w, h, p.blur_radius);
    let coarse = box_blur(&noise, w, h, p.blur_radius * 4 + 1);
    let field: Vec<f64> = fine.iter().zip(&coarse).map(|(f, c)| f + 2.0 * c).collect();
    let sd = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt().max(1e-12);
    let texture = GrayImage::new(
        w,
        h,
        field.iter().map(|v| (128.0 + 40.0 * v / sd).round().clamp(0.0, 255.0) as u8).collect(),
    )?;
    Ok(Identity {
        subject_id: format!("syn{index:03}"),
        texture,
        mask: annulus_mask(p)?,
    })
}

/// A capture of `id`: the texture plus independent Gaussian noise.
pub fn capture(id: &Identity, noise_sd: f64, rng: &mut impl Rng) -> Result<GrayImage> {
    let normal = Normal::new(0.0, noise_sd.max(0.0)).expect("finite sd");
    let px = id
        .texture
        .pixels()
        .iter()
        .map(|&v| (v as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(id.texture.width(), id.texture.height(), px)
}

/// Runs the fallback detector on the preprocessed crop of a capture and
/// packages the result as crop-frame detections. With `rotate_deg` set, every
/// polygon is turned about the iris centre; polygons leaving the frame are
/// dropped.
pub fn detect_on_crop(
    image_id: &str,
    subject_id: &str,
    image: &GrayImage,
    mask: &IrisMask,
    side: usize,
    clahe: &ClaheParams,
    fallback: &FallbackParams,
    rotate_deg: f64,
) -> Result<DetectionSet> {
    let pre = imaging::preprocess(image, mask, side, clahe)?;
    let center = imaging::mask_centroid(&pre.mask)?;
    let found = crate::detection::fallback_detect(&pre.image, &pre.mask, fallback)?;
    let detections = found
        .into_iter()
        .filter_map(|d| {
            let poly = if rotate_deg == 0.0 {
                d.polygon
            } else {
                d.polygon.rotated(center, rotate_deg)
            };
            PatchDetection::new(d.id, poly, d.confidence, DetectionSource::Fallback, side, side).ok()
        })
        .collect();
    DetectionSet::new(image_id, subject_id, Eye::L, 0.0, side, side, detections)
}
