//! Grayscale iris images, segmentation masks and the preprocessing chain
//! (mask, crop around the iris, CLAHE).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PbmError, Result};

/// Default crop side for preprocessed iris images.
pub const DEFAULT_CROP_SIDE: usize = 256;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(PbmError::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(PbmError::InvalidParameter(format!(
                "pixel buffer has {} entries, expected {}",
                pixels.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Loads an 8-bit grayscale PNG. Colour images are converted to luma.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_luma8().save(path.as_ref())?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_luma8()
            .write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn mean_and_std(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let mean = self.pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
        let var = self
            .pixels
            .iter()
            .map(|&p| (p as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }
}

/// Binary segmentation mask; `true` marks iris texture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrisMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl IrisMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(PbmError::EmptyImage);
        }
        if bits.len() != width * height {
            return Err(PbmError::InvalidParameter(format!(
                "mask buffer has {} entries, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    /// Loads a PNG mask; any nonzero pixel is iris.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(
            w as usize,
            h as usize,
            img.into_raw().into_iter().map(|p| p != 0).collect(),
        )
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let pixels = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::new(self.width, self.height, pixels)?.save_png(path)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    /// Tiles along (x, y).
    pub tile_grid: (usize, usize),
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tile_grid: (8, 8),
            clip_limit: 2.0,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tile_grid.0 == 0 || self.tile_grid.1 == 0 {
            return Err(PbmError::InvalidParameter(
                "CLAHE tile grid components must be >= 1".into(),
            ));
        }
        if !(self.clip_limit >= 1.0) || !self.clip_limit.is_finite() {
            return Err(PbmError::InvalidParameter(
                "CLAHE clip limit must be a finite value >= 1.0".into(),
            ));
        }
        Ok(())
    }
}

fn check_dims(img: &GrayImage, mask: &IrisMask) -> Result<()> {
    if img.width != mask.width || img.height != mask.height {
        return Err(PbmError::DimensionMismatch {
            expected_w: img.width,
            expected_h: img.height,
            got_w: mask.width,
            got_h: mask.height,
        });
    }
    Ok(())
}

/// Zeroes every pixel outside the iris mask.
pub fn apply_mask(img: &GrayImage, mask: &IrisMask) -> Result<GrayImage> {
    check_dims(img, mask)?;
    let pixels = img
        .pixels
        .iter()
        .zip(&mask.bits)
        .map(|(&p, &m)| if m { p } else { 0 })
        .collect();
    GrayImage::new(img.width, img.height, pixels)
}

/// Mean of the set-pixel coordinates (pixel centres at integer coordinates).
pub fn mask_centroid(mask: &IrisMask) -> Result<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
    for y in 0..mask.height {
        let row = &mask.bits[y * mask.width..(y + 1) * mask.width];
        for (x, _) in row.iter().enumerate().filter(|(_, &b)| b) {
            sx += x as u64;
            sy += y as u64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(PbmError::EmptyMask);
    }
    Ok((sx as f64 / n as f64, sy as f64 / n as f64))
}

/// Result of [`crop_to_iris`]. `offset` is the source coordinate of the crop's
/// top-left pixel: `crop = source - offset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrisCrop {
    pub image: GrayImage,
    pub mask: IrisMask,
    pub offset: (i64, i64),
}

/// Crops a `side`×`side` window centred on the mask centroid, zero-padding
/// anything that falls outside the source image.
pub fn crop_to_iris(img: &GrayImage, mask: &IrisMask, side: usize) -> Result<IrisCrop> {
    check_dims(img, mask)?;
    if side == 0 {
        return Err(PbmError::InvalidParameter("crop side must be > 0".into()));
    }
    let (cx, cy) = mask_centroid(mask)?;
    // Round half up: a centroid of 127.5 on a 256 image gives the identity crop.
    let half = (side / 2) as i64;
    let x0 = (cx + 0.5).floor() as i64 - half;
    let y0 = (cy + 0.5).floor() as i64 - half;

    let mut pixels = vec![0u8; side * side];
    let mut bits = vec![false; side * side];
    for y in 0..side {
        let sy = y0 + y as i64;
        if sy < 0 || sy >= img.height as i64 {
            continue;
        }
        for x in 0..side {
            let sx = x0 + x as i64;
            if sx < 0 || sx >= img.width as i64 {
                continue;
            }
            let src = sy as usize * img.width + sx as usize;
            pixels[y * side + x] = img.pixels[src];
            bits[y * side + x] = mask.bits[src];
        }
    }
    Ok(IrisCrop {
        image: GrayImage::new(side, side, pixels)?,
        mask: IrisMask::new(side, side, bits)?,
        offset: (x0, y0),
    })
}

/// Contrast-limited adaptive histogram equalization.
///
/// Per-tile histograms are clipped at `clip_limit * tile_area / 256`, the
/// excess is spread uniformly over all bins, and each pixel is mapped by
/// bilinear interpolation between the four nearest tile lookup tables.
pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    params.validate()?;
    let (w, h) = (img.width, img.height);
    let gx = params.tile_grid.0.min(w);
    let gy = params.tile_grid.1.min(h);
    let x_edges: Vec<usize> = (0..=gx).map(|i| i * w / gx).collect();
    let y_edges: Vec<usize> = (0..=gy).map(|j| j * h / gy).collect();

    let mut luts = vec![[0u8; 256]; gx * gy];
    for ty in 0..gy {
        for tx in 0..gx {
            let mut hist = [0usize; 256];
            for y in y_edges[ty]..y_edges[ty + 1] {
                let row = &img.pixels[y * w..(y + 1) * w];
                for &p in &row[x_edges[tx]..x_edges[tx + 1]] {
                    hist[p as usize] += 1;
                }
            }
            let area = (x_edges[tx + 1] - x_edges[tx]) * (y_edges[ty + 1] - y_edges[ty]);
            luts[ty * gx + tx] = tile_lut(&mut hist, area, params.clip_limit);
        }
    }

    let tile_w = w as f64 / gx as f64;
    let tile_h = h as f64 / gy as f64;
    let axis = |pos: usize, tile: f64, n: usize| -> (usize, usize, f64) {
        let t = (pos as f64 + 0.5) / tile - 0.5;
        if t <= 0.0 {
            (0, 0, 0.0)
        } else if t >= (n - 1) as f64 {
            (n - 1, n - 1, 0.0)
        } else {
            let i0 = t.floor() as usize;
            (i0, i0 + 1, t - i0 as f64)
        }
    };

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (j0, j1, ay) = axis(y, tile_h, gy);
        for x in 0..w {
            let (i0, i1, ax) = axis(x, tile_w, gx);
            let p = img.pixels[y * w + x] as usize;
            let v00 = luts[j0 * gx + i0][p] as f64;
            let v01 = luts[j0 * gx + i1][p] as f64;
            let v10 = luts[j1 * gx + i0][p] as f64;
            let v11 = luts[j1 * gx + i1][p] as f64;
            let top = v00 + (v01 - v00) * ax;
            let bottom = v10 + (v11 - v10) * ax;
            let v = top + (bottom - top) * ay;
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, out)
}

fn tile_lut(hist: &mut [usize; 256], area: usize, clip_limit: f64) -> [u8; 256] {
    let clip = ((clip_limit * area as f64 / 256.0) as usize).max(1);
    let mut excess = 0usize;
    for bin in hist.iter_mut() {
        if *bin > clip {
            excess += *bin - clip;
            *bin = clip;
        }
    }
    let per_bin = excess / 256;
    let residual = excess % 256;
    for bin in hist.iter_mut() {
        *bin += per_bin;
    }
    if residual > 0 {
        let step = (256 / residual).max(1);
        for i in (0..256).step_by(step).take(residual) {
            hist[i] += 1;
        }
    }

    let scale = 255.0 / area as f64;
    let mut lut = [0u8; 256];
    let mut cdf = 0usize;
    for (i, &count) in hist.iter().enumerate() {
        cdf += count;
        lut[i] = (cdf as f64 * scale).round().clamp(0.0, 255.0) as u8;
    }
    lut
}

/// Output of [`preprocess`]: the masked, cropped and enhanced image plus the
/// cropped mask.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub image: GrayImage,
    pub mask: IrisMask,
    pub offset: (i64, i64),
}

/// mask → crop → CLAHE.
pub fn preprocess(
    img: &GrayImage,
    mask: &IrisMask,
    side: usize,
    params: &ClaheParams,
) -> Result<Preprocessed> {
    let masked = apply_mask(img, mask)?;
    let crop = crop_to_iris(&masked, mask, side)?;
    let image = clahe(&crop.image, params)?;
    Ok(Preprocessed {
        image,
        mask: crop.mask,
        offset: crop.offset,
    })
}
