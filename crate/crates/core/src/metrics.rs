//! Image, segmentation, and alignment-quality metrics.
//!
//! Segmentation metrics (Dice, binary cross-entropy and their sum) operate
//! on probability maps; reconstruction quality combines a mean-L1 term with
//! SSIM. Chin-line deviation quantifies how closely a rendered mask's lower
//! boundary follows the jaw landmarks.

use image::RgbaImage;

use crate::error::{Error, Result};
use crate::shape::{Point, Shape};

/// Smoothing epsilon for the Dice loss denominator.
pub const DICE_EPS: f64 = 1e-7;
/// Probability clip for binary cross-entropy.
pub const BCE_CLIP: f64 = 1e-7;
/// SSIM sliding-window side length.
pub const SSIM_WINDOW: usize = 8;
/// Alpha threshold (on [0,1]) for mask footprint extraction.
pub const ALPHA_THRESHOLD: f64 = 0.5;

/// A raster of probabilities in `[0, 1]` (soft map) or `{0, 1}` (hard mask).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "binary map data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter(
                "binary map values must lie in [0, 1]".into(),
            ));
        }
        Ok(BinaryMap {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMap::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        BinaryMap::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn check_dims(&self, other: &BinaryMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Dice loss `1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)`.
pub fn dice_loss(pred: &BinaryMap, gt: &BinaryMap) -> Result<f64> {
    pred.check_dims(gt)?;
    let mut intersection = 0.0;
    let mut pred_sum = 0.0;
    let mut gt_sum = 0.0;
    for (p, g) in pred.data.iter().zip(gt.data.iter()) {
        intersection += p * g;
        pred_sum += p;
        gt_sum += g;
    }
    Ok(1.0 - (2.0 * intersection + DICE_EPS) / (pred_sum + gt_sum + DICE_EPS))
}

/// Mean binary cross-entropy with predictions clipped to
/// `[BCE_CLIP, 1 - BCE_CLIP]`.
pub fn bce_loss(pred: &BinaryMap, gt: &BinaryMap) -> Result<f64> {
    pred.check_dims(gt)?;
    let n = pred.data.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty binary map".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.data.iter().zip(gt.data.iter()) {
        let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        total -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
    }
    Ok(total / n as f64)
}

/// Segmentation loss: Dice plus binary cross-entropy.
pub fn seg_loss(pred: &BinaryMap, gt: &BinaryMap) -> Result<f64> {
    Ok(dice_loss(pred, gt)? + bce_loss(pred, gt)?)
}

/// A grayscale raster of arbitrary dynamic range.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "gray map data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "gray map values must be finite".into(),
            ));
        }
        Ok(GrayMap {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayMap::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        GrayMap::new(width, height, vec![value; width * height])
    }

    /// Converts an RGBA raster to Rec.601 luma on `[0, 1]`.
    pub fn from_rgba_luma(image: &RgbaImage) -> Self {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut data = Vec::with_capacity(w * h);
        for p in image.pixels() {
            let [r, g, b, _] = p.0;
            data.push((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0);
        }
        GrayMap {
            width: w,
            height: h,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Mean SSIM over all 8x8 windows at stride 1 (uniform window weights).
///
/// `dynamic_range` is the value range of the inputs: 255 for 8-bit data,
/// 1 for unit-normalized intensities.
pub fn ssim(a: &GrayMap, b: &GrayMap, dynamic_range: f64) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "image {}x{} is smaller than the {}x{} SSIM window",
            a.width, a.height, SSIM_WINDOW, SSIM_WINDOW
        )));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidParameter(
            "ssim dynamic range must be > 0".into(),
        ));
    }

    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let win = SSIM_WINDOW;
    let inv_n = 1.0 / (win * win) as f64;

    let mut total = 0.0;
    let mut windows = 0usize;
    for wy in 0..=(a.height - win) {
        for wx in 0..=(a.width - win) {
            let mut sum_a = 0.0;
            let mut sum_b = 0.0;
            let mut sum_aa = 0.0;
            let mut sum_bb = 0.0;
            let mut sum_ab = 0.0;
            for y in wy..wy + win {
                for x in wx..wx + win {
                    let va = a.at(x, y);
                    let vb = b.at(x, y);
                    sum_a += va;
                    sum_b += vb;
                    sum_aa += va * va;
                    sum_bb += vb * vb;
                    sum_ab += va * vb;
                }
            }
            let mu_a = sum_a * inv_n;
            let mu_b = sum_b * inv_n;
            let var_a = sum_aa * inv_n - mu_a * mu_a;
            let var_b = sum_bb * inv_n - mu_b * mu_b;
            let cov = sum_ab * inv_n - mu_a * mu_b;

            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Reconstruction loss: mean absolute difference minus SSIM.
///
/// Inputs are expected on `[0, 1]`; the SSIM term uses dynamic range 1.
/// Identical images score exactly `-1`.
pub fn reconstruction_loss(a: &GrayMap, b: &GrayMap) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let n = a.data.len();
    let l1: f64 = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n as f64;
    Ok(l1 - ssim(a, b, 1.0)?)
}

/// Extracts the lower boundary of a mask raster: for each integer column in
/// `[x_min, x_max]`, the lowest pixel whose alpha exceeds 1/2. Coordinates
/// are absolute (the raster's placement `offset` is applied).
pub fn mask_lower_boundary(
    mask: &RgbaImage,
    offset: (i64, i64),
    x_min: f64,
    x_max: f64,
) -> Vec<Point> {
    let mut boundary = Vec::new();
    let threshold = (ALPHA_THRESHOLD * 255.0) as u8; // alpha strictly above 127
    let col_lo = x_min.ceil() as i64;
    let col_hi = x_max.floor() as i64;
    for col in col_lo..=col_hi {
        let local_x = col - offset.0;
        if local_x < 0 || local_x >= mask.width() as i64 {
            continue;
        }
        let mut lowest: Option<i64> = None;
        for y in 0..mask.height() {
            if mask.get_pixel(local_x as u32, y).0[3] > threshold {
                lowest = Some(offset.1 + y as i64);
            }
        }
        if let Some(y) = lowest {
            boundary.push(Point::new(col as f64, y as f64));
        }
    }
    boundary
}

/// Mean distance from each jaw landmark to the nearest point of the mask's
/// lower boundary polyline.
///
/// Boundary points in adjacent columns are treated as connected segments;
/// isolated points contribute point distances.
pub fn chinline_deviation(boundary: &[Point], jaw: &Shape) -> Result<f64> {
    if boundary.is_empty() {
        return Err(Error::EmptyMaskFootprint);
    }
    if jaw.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "need at least 2 jaw points, got {}",
            jaw.len()
        )));
    }

    let mut total = 0.0;
    for p in jaw.iter() {
        let mut best = f64::INFINITY;
        for (i, q) in boundary.iter().enumerate() {
            best = best.min(p.distance(*q));
            if i + 1 < boundary.len() && (boundary[i + 1].x - q.x).abs() <= 1.0 + 1e-9 {
                best = best.min(point_segment_distance(*p, *q, boundary[i + 1]));
            }
        }
        total += best;
    }
    Ok(total / jaw.len() as f64)
}

/// Convenience wrapper: extracts the lower boundary over the jaw's x-range
/// and measures the deviation in one call.
pub fn chinline_deviation_from_raster(
    mask: &RgbaImage,
    offset: (i64, i64),
    jaw: &Shape,
) -> Result<f64> {
    let x_min = jaw.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let x_max = jaw.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let boundary = mask_lower_boundary(mask, offset, x_min, x_max);
    chinline_deviation(&boundary, jaw)
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len_sq = ab.dot(ab);
    if len_sq <= 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}
