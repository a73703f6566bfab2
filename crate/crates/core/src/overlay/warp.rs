//! Piecewise-affine template warping over a fixed triangulation.
//!
//! Each triangle of the template landmark set is mapped by the affine
//! transform determined by its three vertex correspondences, so template
//! landmarks land exactly on their targets. Rasterization walks target
//! pixels, inverse-maps them into the template, and resamples bilinearly
//! with edge clamping.

use image::{Rgba, RgbaImage};

use crate::error::{Error, Result};
use crate::shape::{Point, Shape};

/// Targets whose bounding box exceeds this many pixels are rejected.
const MAX_FRAGMENT_PIXELS: i64 = 1 << 30;

/// Barycentric inside-test slack, in barycentric units.
const INSIDE_EPS: f64 = 1e-9;

/// Sample positions within this distance of an integer grid point snap to
/// it, keeping identity and pure-translation warps exact.
const GRID_SNAP_EPS: f64 = 1e-8;

/// A 2-D affine map `p -> L*p + t`, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    /// `[[a, b, tx], [c, d, ty]]`
    pub rows: [[f64; 3]; 2],
}

impl AffineMap {
    pub fn identity() -> Self {
        AffineMap {
            rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let [[a, b, tx], [c, d, ty]] = self.rows;
        Point::new(a * p.x + b * p.y + tx, c * p.x + d * p.y + ty)
    }

    /// The affine map sending each `src` triangle vertex to its `dst`
    /// counterpart. `None` if the source triangle is degenerate.
    pub fn from_triangle(src: [Point; 3], dst: [Point; 3]) -> Option<Self> {
        let u1 = src[1] - src[0];
        let u2 = src[2] - src[0];
        let det = u1.cross(u2);
        if det == 0.0 {
            return None;
        }
        let v1 = dst[1] - dst[0];
        let v2 = dst[2] - dst[0];
        // L = [v1 v2] * [u1 u2]^-1
        let a = (v1.x * u2.y - v2.x * u1.y) / det;
        let b = (v2.x * u1.x - v1.x * u2.x) / det;
        let c = (v1.y * u2.y - v2.y * u1.y) / det;
        let d = (v2.y * u1.x - v1.y * u2.x) / det;
        let tx = dst[0].x - a * src[0].x - b * src[0].y;
        let ty = dst[0].y - c * src[0].x - d * src[0].y;
        Some(AffineMap {
            rows: [[a, b, tx], [c, d, ty]],
        })
    }

    /// Least-squares affine fit over point correspondences (at least 3,
    /// not collinear).
    pub fn fit_least_squares(src: &[Point], dst: &[Point]) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::Arity {
                expected: src.len(),
                actual: dst.len(),
            });
        }
        if src.len() < 3 {
            return Err(Error::InvalidParameter(
                "affine fit needs at least 3 correspondences".into(),
            ));
        }
        // Normal equations with design rows [x, y, 1].
        let mut g = [[0.0f64; 3]; 3];
        let mut rhs_x = [0.0f64; 3];
        let mut rhs_y = [0.0f64; 3];
        for (s, d) in src.iter().zip(dst.iter()) {
            let row = [s.x, s.y, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    g[i][j] += row[i] * row[j];
                }
                rhs_x[i] += row[i] * d.x;
                rhs_y[i] += row[i] * d.y;
            }
        }
        let sol_x = solve3(g, rhs_x).ok_or_else(|| {
            Error::DegenerateShape("affine fit correspondences are collinear".into())
        })?;
        let sol_y = solve3(g, rhs_y).ok_or_else(|| {
            Error::DegenerateShape("affine fit correspondences are collinear".into())
        })?;
        Ok(AffineMap {
            rows: [sol_x, sol_y],
        })
    }
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = [[0.0f64; 4]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3] = rhs[i];
    }
    for col in 0..3 {
        let mut pivot = col;
        for r in col + 1..3 {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

/// A warped RGBA fragment plus its placement offset in target coordinates.
#[derive(Debug, Clone)]
pub struct WarpedFragment {
    pub image: RgbaImage,
    /// Target-space coordinate of the fragment's top-left pixel.
    pub offset: (i64, i64),
    /// Indices of target triangles skipped because they collapsed to zero
    /// area.
    pub skipped_triangles: Vec<usize>,
}

/// Per-triangle data used during rasterization.
struct TrianglePlan {
    dst: [Point; 3],
    /// Maps target coordinates back into template coordinates.
    inverse: AffineMap,
    /// Twice the signed area of the target triangle.
    double_area: f64,
}

/// Warps `template_image` so that `src_landmarks` land on `dst_landmarks`,
/// using a fixed triangulation (vertex indices into the landmark lists).
///
/// Pixels outside every target triangle have alpha 0. Triangles whose
/// target collapses to zero area render empty and are reported in
/// [`WarpedFragment::skipped_triangles`]; if every triangle collapses the
/// warp fails.
pub fn warp_piecewise_affine(
    template_image: &RgbaImage,
    src_landmarks: &Shape,
    dst_landmarks: &Shape,
    triangulation: &[[usize; 3]],
) -> Result<WarpedFragment> {
    if src_landmarks.len() != dst_landmarks.len() {
        return Err(Error::ShapeArity {
            expected: src_landmarks.len(),
            actual: dst_landmarks.len(),
        });
    }
    if triangulation.is_empty() {
        return Err(Error::InvalidParameter("empty triangulation".into()));
    }
    let n = src_landmarks.len();
    for (i, tri) in triangulation.iter().enumerate() {
        if tri.iter().any(|&v| v >= n) {
            return Err(Error::InvalidParameter(format!(
                "triangle {i} references vertex out of range (0..{n})"
            )));
        }
    }

    let mut plans = Vec::with_capacity(triangulation.len());
    let mut skipped = Vec::new();
    for (i, tri) in triangulation.iter().enumerate() {
        let src = [
            src_landmarks[tri[0]],
            src_landmarks[tri[1]],
            src_landmarks[tri[2]],
        ];
        let dst = [
            dst_landmarks[tri[0]],
            dst_landmarks[tri[1]],
            dst_landmarks[tri[2]],
        ];
        let double_area = (dst[1] - dst[0]).cross(dst[2] - dst[0]);
        if double_area == 0.0 {
            skipped.push(i);
            continue;
        }
        // The template-side triangle is validated non-degenerate when the
        // template loads, so the inverse map always exists here.
        match AffineMap::from_triangle(dst, src) {
            Some(inverse) => plans.push(TrianglePlan {
                dst,
                inverse,
                double_area,
            }),
            None => skipped.push(i),
        }
    }
    if plans.is_empty() {
        return Err(Error::WarpDegenerate);
    }

    // Fragment bounds over the surviving target triangles.
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for plan in &plans {
        for p in &plan.dst {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
    }
    let x0 = min_x.floor() as i64;
    let y0 = min_y.floor() as i64;
    let x1 = max_x.ceil() as i64;
    let y1 = max_y.ceil() as i64;
    let width = x1 - x0 + 1;
    let height = y1 - y0 + 1;
    if width <= 0 || height <= 0 || width * height > MAX_FRAGMENT_PIXELS {
        return Err(Error::Numerical(format!(
            "warp target bounding box {width}x{height} is unusable"
        )));
    }

    let mut image = RgbaImage::from_pixel(width as u32, height as u32, Rgba([0, 0, 0, 0]));
    let mut written = vec![false; (width * height) as usize];

    for plan in &plans {
        let tx0 = plan
            .dst
            .iter()
            .map(|p| p.x)
            .fold(f64::INFINITY, f64::min)
            .floor() as i64;
        let tx1 = plan
            .dst
            .iter()
            .map(|p| p.x)
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil() as i64;
        let ty0 = plan
            .dst
            .iter()
            .map(|p| p.y)
            .fold(f64::INFINITY, f64::min)
            .floor() as i64;
        let ty1 = plan
            .dst
            .iter()
            .map(|p| p.y)
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil() as i64;

        for py in ty0..=ty1 {
            for px in tx0..=tx1 {
                let idx = ((py - y0) * width + (px - x0)) as usize;
                if written[idx] {
                    continue;
                }
                let p = Point::new(px as f64, py as f64);
                if !barycentric_inside(p, &plan.dst, plan.double_area) {
                    continue;
                }
                let sample = plan.inverse.apply(p);
                let rgba = sample_bilinear(template_image, sample);
                image.put_pixel((px - x0) as u32, (py - y0) as u32, rgba);
                written[idx] = true;
            }
        }
    }

    Ok(WarpedFragment {
        image,
        offset: (x0, y0),
        skipped_triangles: skipped,
    })
}

fn barycentric_inside(p: Point, tri: &[Point; 3], double_area: f64) -> bool {
    let l0 = (tri[1] - p).cross(tri[2] - p) / double_area;
    let l1 = (tri[2] - p).cross(tri[0] - p) / double_area;
    let l2 = (tri[0] - p).cross(tri[1] - p) / double_area;
    l0 >= -INSIDE_EPS && l1 >= -INSIDE_EPS && l2 >= -INSIDE_EPS
}

/// Bilinear sampling with edge-clamp addressing. Sample positions that are
/// numerically on the integer grid snap to the exact texel.
pub fn sample_bilinear(image: &RgbaImage, pos: Point) -> Rgba<u8> {
    let w = image.width() as i64;
    let h = image.height() as i64;

    let mut u = pos.x;
    let mut v = pos.y;
    if (u - u.round()).abs() < GRID_SNAP_EPS {
        u = u.round();
    }
    if (v - v.round()).abs() < GRID_SNAP_EPS {
        v = v.round();
    }
    u = u.clamp(0.0, (w - 1) as f64);
    v = v.clamp(0.0, (h - 1) as f64);

    let x0 = u.floor() as i64;
    let y0 = v.floor() as i64;
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);

    let p00 = image.get_pixel(x0 as u32, y0 as u32).0;
    let p10 = image.get_pixel(x1 as u32, y0 as u32).0;
    let p01 = image.get_pixel(x0 as u32, y1 as u32).0;
    let p11 = image.get_pixel(x1 as u32, y1 as u32).0;

    let mut out = [0u8; 4];
    for c in 0..4 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round() as u8;
    }
    Rgba(out)
}
