//! BSIF iris codes: a bank of square filters applied by cross-correlation,
//! responses binarized at `> 0`, one packed bit plane per filter.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::detection::ShapeMask;
use crate::error::{PbmError, Result};
use crate::imaging::{GrayImage, IrisMask};

const FILE_MAGIC: &str = "BSIF";
const FILE_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    n_filters: usize,
    size: usize,
    /// Filter-major, then row-major.
    coefficients: Vec<f64>,
}

impl FilterBank {
    pub fn new(n_filters: usize, size: usize, coefficients: Vec<f64>) -> Result<Self> {
        if n_filters == 0 {
            return Err(PbmError::FilterBank("bank must hold at least one filter".into()));
        }
        if size % 2 == 0 {
            return Err(PbmError::FilterBank(format!(
                "filter size must be odd, got {size}"
            )));
        }
        let expected = n_filters * size * size;
        if coefficients.len() != expected {
            return Err(PbmError::FilterBank(format!(
                "expected {expected} coefficients, found {}",
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(PbmError::FilterBank("non-finite coefficient".into()));
        }
        Ok(Self {
            n_filters,
            size,
            coefficients,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn filter(&self, k: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.coefficients[k * n..(k + 1) * n]
    }

    /// Copy of the bank with every coefficient negated.
    pub fn negated(&self) -> Self {
        Self {
            n_filters: self.n_filters,
            size: self.size,
            coefficients: self.coefficients.iter().map(|c| -c).collect(),
        }
    }

    /// Parses the text format: a header `BSIF <n_filters> <size> [v1]`
    /// followed by `n_filters * size * size` whitespace-separated reals.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .by_ref()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| PbmError::FilterBank("empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 3 || fields.len() > 4 || fields[0] != FILE_MAGIC {
            return Err(PbmError::FilterBank(format!("malformed header {header:?}")));
        }
        let parse_count = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| PbmError::FilterBank(format!("malformed header {header:?}")))
        };
        let n_filters = parse_count(fields[1])?;
        let size = parse_count(fields[2])?;
        if let Some(version) = fields.get(3) {
            if *version != FILE_VERSION {
                return Err(PbmError::FilterBank(format!(
                    "unsupported version {version}"
                )));
            }
        }
        if size % 2 == 0 {
            return Err(PbmError::FilterBank(format!(
                "filter size must be odd, got {size}"
            )));
        }
        let coefficients = lines
            .flat_map(str::split_whitespace)
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| PbmError::FilterBank(format!("bad coefficient {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n_filters, size, coefficients)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PbmError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{FILE_MAGIC} {} {} {FILE_VERSION}\n", self.n_filters, self.size);
        for row in self.coefficients.chunks(self.size) {
            let mut first = true;
            for c in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{c:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| PbmError::io(path, e))
    }

    /// Seeded stand-in for a learned bank: Gaussian random filters, box
    /// smoothed, then made zero-mean with unit L2 norm.
    pub fn placeholder(n_filters: usize, size: usize, seed: u64) -> Result<Self> {
        if size % 2 == 0 {
            return Err(PbmError::FilterBank(format!(
                "filter size must be odd, got {size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coefficients = Vec::with_capacity(n_filters * size * size);
        for _ in 0..n_filters {
            let raw: Vec<f64> = (0..size * size)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut f = box_smooth(&box_smooth(&raw, size), size);
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            f.iter_mut().for_each(|c| *c -= mean);
            let norm = f.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 0.0 {
                f.iter_mut().for_each(|c| *c /= norm);
            }
            coefficients.extend(f);
        }
        Self::new(n_filters, size, coefficients)
    }
}

fn box_smooth(src: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for y in 0..size {
        for x in 0..size {
            let (mut acc, mut n) = (0.0, 0.0);
            for yy in y.saturating_sub(1)..(y + 2).min(size) {
                for xx in x.saturating_sub(1)..(x + 2).min(size) {
                    acc += src[yy * size + xx];
                    n += 1.0;
                }
            }
            out[y * size + x] = acc / n;
        }
    }
    out
}

/// A packed binary plane. Bit `x` of row `y` lives in word `y * stride + x / 64`
/// at bit position `x % 64`; padding bits past `width` are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlane {
    width: usize,
    height: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitPlane {
    pub fn new(width: usize, height: usize) -> Self {
        let stride = width.div_ceil(64);
        Self {
            width,
            height,
            stride,
            words: vec![0; stride * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut plane = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    plane.set(x, y, true);
                }
            }
        }
        plane
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        (self.words[y * self.stride + x / 64] >> (x % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let word = &mut self.words[y * self.stride + x / 64];
        let bit = 1u64 << (x % 64);
        if value {
            *word |= bit;
        } else {
            *word &= !bit;
        }
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[u64] {
        &self.words[y * self.stride..(y + 1) * self.stride]
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if self.get(x0 + x, y0 + y) {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    pub fn and(&self, other: &Self) -> Self {
        debug_assert_eq!((self.width, self.height), (other.width, other.height));
        Self {
            width: self.width,
            height: self.height,
            stride: self.stride,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }
}

/// 64 bits of `row` starting at bit position `start`; positions outside the
/// row read as zero.
#[inline]
fn word_at(row: &[u64], start: i64) -> u64 {
    if start >= 0 {
        let w = (start / 64) as usize;
        let s = (start % 64) as u32;
        let lo = row.get(w).copied().unwrap_or(0) >> s;
        let hi = if s == 0 {
            0
        } else {
            row.get(w + 1).copied().unwrap_or(0) << (64 - s)
        };
        lo | hi
    } else if start > -64 {
        row.first().copied().unwrap_or(0) << (-start) as u32
    } else {
        0
    }
}

/// Per-pixel BSIF code: one bit plane per filter plus the validity plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrisCode {
    width: usize,
    height: usize,
    planes: Vec<BitPlane>,
    valid: BitPlane,
}

impl IrisCode {
    pub fn from_parts(planes: Vec<BitPlane>, valid: BitPlane) -> Result<Self> {
        let (width, height) = (valid.width, valid.height);
        if planes.iter().any(|p| p.width != width || p.height != height) {
            return Err(PbmError::InvalidParameter(
                "code planes and validity plane differ in size".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            planes,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[BitPlane] {
        &self.planes
    }

    pub fn valid(&self) -> &BitPlane {
        &self.valid
    }
}

/// Raw cross-correlation responses, one row-major buffer per filter, with
/// zero padding outside the image.
pub fn filter_responses(img: &GrayImage, bank: &FilterBank) -> Vec<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    let size = bank.size();
    let r = bank.radius() as i64;
    let src: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();

    (0..bank.n_filters())
        .map(|k| {
            let kernel = bank.filter(k);
            let mut out = vec![0.0; w * h];
            out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                let y = y as i64;
                for (x, slot) in row.iter_mut().enumerate() {
                    let x = x as i64;
                    let mut acc = 0.0;
                    for ky in 0..size as i64 {
                        let sy = y + ky - r;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                        let k_row = &kernel[ky as usize * size..(ky as usize + 1) * size];
                        let kx_lo = (r - x).max(0) as usize;
                        let kx_hi = (w as i64 - x + r).min(size as i64) as usize;
                        if kx_lo >= kx_hi {
                            continue;
                        }
                        let sx_lo = (x + kx_lo as i64 - r) as usize;
                        let span = kx_hi - kx_lo;
                        acc += k_row[kx_lo..kx_hi]
                            .iter()
                            .zip(&src_row[sx_lo..sx_lo + span])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    *slot = acc;
                }
            });
            out
        })
        .collect()
}

/// Encodes an image into per-pixel BSIF codes.
///
/// A pixel is valid when it is inside the iris mask and the whole filter
/// footprint centred on it lies within the image, so padded borders never
/// contribute to distances.
pub fn encode(img: &GrayImage, mask: &IrisMask, bank: &FilterBank) -> Result<IrisCode> {
    let (w, h) = (img.width(), img.height());
    if mask.width() != w || mask.height() != h {
        return Err(PbmError::DimensionMismatch {
            expected_w: w,
            expected_h: h,
            got_w: mask.width(),
            got_h: mask.height(),
        });
    }
    let planes = filter_responses(img, bank)
        .into_iter()
        .map(|resp| BitPlane::from_fn(w, h, |x, y| resp[y * w + x] > 0.0))
        .collect();
    let r = bank.radius();
    let valid = BitPlane::from_fn(w, h, |x, y| {
        x >= r && y >= r && x + r < w && y + r < h && mask.get(x, y)
    });
    IrisCode::from_parts(planes, valid)
}

/// Code planes of one patch, cropped to the patch bounding box, plus the
/// usable pixels (patch shape ∧ code validity).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchCode {
    origin: (usize, usize),
    planes: Vec<BitPlane>,
    usable: BitPlane,
    area: usize,
}

impl PatchCode {
    pub fn from_parts(origin: (usize, usize), planes: Vec<BitPlane>, usable: BitPlane) -> Result<Self> {
        if planes
            .iter()
            .any(|p| p.width != usable.width || p.height != usable.height)
        {
            return Err(PbmError::InvalidParameter(
                "patch planes and usability plane differ in size".into(),
            ));
        }
        let area = usable.count_ones();
        Ok(Self {
            origin,
            planes,
            usable,
            area,
        })
    }

    /// Top-left corner of the bounding box in code coordinates.
    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.usable.width
    }

    pub fn height(&self) -> usize {
        self.usable.height
    }

    pub fn n_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[BitPlane] {
        &self.planes
    }

    pub fn usable(&self) -> &BitPlane {
        &self.usable
    }

    /// Number of usable pixels.
    pub fn area(&self) -> usize {
        self.area
    }

    /// Mean of usable pixel coordinates, in code coordinates.
    pub fn usable_centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..self.height() {
            for x in 0..self.width() {
                if self.usable.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        if n == 0.0 {
            return (self.origin.0 as f64, self.origin.1 as f64);
        }
        (self.origin.0 as f64 + sx / n, self.origin.1 as f64 + sy / n)
    }
}

pub fn extract_patch_code(code: &IrisCode, shape: &ShapeMask) -> Result<PatchCode> {
    let (x0, y0) = shape.origin();
    let (w, h) = (shape.width(), shape.height());
    if x0 + w > code.width || y0 + h > code.height {
        return Err(PbmError::ShapeOutOfBounds {
            width: code.width,
            height: code.height,
        });
    }
    let planes: Vec<BitPlane> = code.planes.iter().map(|p| p.crop(x0, y0, w, h)).collect();
    let usable = BitPlane::from_fn(w, h, |x, y| shape.get(x, y) && code.valid.get(x0 + x, y0 + y));
    let patch = PatchCode::from_parts((x0, y0), planes, usable)?;
    if patch.area == 0 {
        return Err(PbmError::UnusablePatch);
    }
    Ok(patch)
}

/// Relative placement of patch `b` over patch `a`: pixel `(x, y)` of `a`
/// (local coordinates) faces pixel `(x - dx, y - dy)` of `b`.
pub type Offset = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HammingResult {
    /// `None` when the usable masks do not overlap.
    pub distance: Option<f64>,
    pub overlap_area: usize,
    /// Differing bits summed over all planes.
    pub differing_bits: u64,
}

/// Normalized distance from raw counts; the mean of per-plane fractions
/// reduces to one division because every plane shares the same overlap.
pub fn normalized_distance(differing_bits: u64, overlap_area: usize, n_planes: usize) -> Option<f64> {
    if overlap_area == 0 || n_planes == 0 {
        None
    } else {
        Some(differing_bits as f64 / (overlap_area as f64 * n_planes as f64))
    }
}

fn overlapping_rows(a: &PatchCode, b: &PatchCode, dy: i32) -> std::ops::Range<usize> {
    let lo = (dy as i64).max(0);
    let hi = (a.height() as i64).min(b.height() as i64 + dy as i64);
    if hi <= lo {
        0..0
    } else {
        lo as usize..hi as usize
    }
}

/// Number of pixels usable in both patches at `offset`.
pub fn overlap_area(a: &PatchCode, b: &PatchCode, offset: Offset) -> usize {
    let (dx, dy) = offset;
    let mut total = 0usize;
    for ya in overlapping_rows(a, b, dy) {
        let yb = (ya as i64 - dy as i64) as usize;
        let ua = a.usable.row(ya);
        let ub = b.usable.row(yb);
        for (wi, &wa) in ua.iter().enumerate() {
            if wa == 0 {
                continue;
            }
            let wb = word_at(ub, wi as i64 * 64 - dx as i64);
            total += (wa & wb).count_ones() as usize;
        }
    }
    total
}

/// Masked Hamming distance between two patch codes at a relative offset.
pub fn hamming_masked(a: &PatchCode, b: &PatchCode, offset: Offset) -> Result<HammingResult> {
    if a.n_planes() != b.n_planes() {
        return Err(PbmError::PlaneCountMismatch(a.n_planes(), b.n_planes()));
    }
    let (dx, dy) = offset;
    let mut overlap = 0usize;
    let mut differing = 0u64;
    for ya in overlapping_rows(a, b, dy) {
        let yb = (ya as i64 - dy as i64) as usize;
        let ua = a.usable.row(ya);
        let ub = b.usable.row(yb);
        for (wi, &wa) in ua.iter().enumerate() {
            let start = wi as i64 * 64 - dx as i64;
            let both = wa & word_at(ub, start);
            if both == 0 {
                continue;
            }
            overlap += both.count_ones() as usize;
            for (pa, pb) in a.planes.iter().zip(&b.planes) {
                let xa = pa.row(ya)[wi];
                let xb = word_at(pb.row(yb), start);
                differing += ((xa ^ xb) & both).count_ones() as u64;
            }
        }
    }
    Ok(HammingResult {
        distance: normalized_distance(differing, overlap, a.n_planes()),
        overlap_area: overlap,
        differing_bits: differing,
    })
}
