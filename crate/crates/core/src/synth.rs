//! Deterministic synthetic face corpora, flat-shaded face rendering, and
//! procedurally drawn mask templates.
//!
//! The generator produces 68-landmark faces from a parametric family: a
//! base geometry, up to three shape modes (face width, chin length, jaw
//! asymmetry), a yaw parameter realized through per-landmark depths, a
//! random similarity pose, and optional Gaussian landmark noise. Everything
//! is reproducible from a seed.

use image::{Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::overlay::{ClassLabel, MaskTemplate, View, MASK17_FACE_INDICES};
use crate::shape::{Point, Shape, SimilarityTransform};

/// Standard deviations of the three shape-mode weights.
pub const MODE_SIGMAS: [f64; 3] = [0.034, 0.121, 0.092];

/// Yaw used when drawing the profile templates.
pub const TEMPLATE_PROFILE_YAW: f64 = 0.5;

/// Configuration for the synthetic corpus generator.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub count: usize,
    /// Number of active shape modes (0..=3).
    pub modes: usize,
    /// Landmark noise standard deviation, in pixels.
    pub noise_sigma: f64,
    /// Yaw is drawn uniformly from `[-yaw_range, yaw_range]`.
    pub yaw_range: f64,
    pub seed: u64,
    /// Rendered face images are square with this side length.
    pub image_size: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 50,
            modes: 3,
            noise_sigma: 0.0,
            yaw_range: 0.0,
            seed: 0,
            image_size: 256,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidParameter("count must be >= 1".into()));
        }
        if self.modes > 3 {
            return Err(Error::InvalidParameter(format!(
                "at most 3 shape modes are available, got {}",
                self.modes
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise sigma must be >= 0".into()));
        }
        if !(0.0..=0.9).contains(&self.yaw_range) {
            return Err(Error::InvalidParameter(
                "yaw range must lie in [0, 0.9]".into(),
            ));
        }
        if self.image_size < 64 {
            return Err(Error::InvalidParameter("image size must be >= 64".into()));
        }
        Ok(())
    }
}

/// One generated face: clean and noisy landmark sets plus metadata.
#[derive(Debug, Clone)]
pub struct SynthCase {
    pub name: String,
    /// Ground-truth landmarks (68 points, pixels).
    pub clean: Shape,
    /// Detector-like landmarks: clean plus Gaussian noise.
    pub noisy: Shape,
    pub yaw: f64,
    pub label: ClassLabel,
}

/// Generative parameters for one face, before posing.
#[derive(Debug, Clone, Copy, Default)]
pub struct FaceParams {
    pub mode_weights: [f64; 3],
    pub yaw: f64,
}

/// A landmark with its out-of-plane depth, used to realize yaw.
#[derive(Clone, Copy)]
struct Landmark3 {
    x: f64,
    y: f64,
    z: f64,
}

/// The canonical 68-landmark face in a unit frame (half-width 1, y down).
/// Indices follow the 1-based convention shifted down by one.
fn base_face() -> Vec<Landmark3> {
    let mut pts = Vec::with_capacity(68);

    // 1..=17: jawline from image-left ear over the chin to image-right ear.
    for i in 0..17 {
        let t = i as f64 / 16.0;
        let phi = std::f64::consts::PI * t;
        pts.push(Landmark3 {
            x: -phi.cos(),
            y: -0.05 + 1.05 * phi.sin(),
            z: -0.45 * phi.cos() * phi.cos() + 0.05 * phi.sin(),
        });
    }
    // 18..=22 and 23..=27: eyebrows.
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let s = i as f64 / 4.0;
            let s = if side < 0.0 { s } else { 1.0 - s };
            pts.push(Landmark3 {
                x: side * (0.75 - 0.60 * s),
                y: -0.55 - 0.08 * (std::f64::consts::PI * s).sin(),
                z: 0.05,
            });
        }
    }
    // 28..=31: nose bridge, top to tip.
    let bridge_y = [-0.45, -0.28, -0.12, 0.05];
    let bridge_z = [0.30, 0.34, 0.38, 0.45];
    for i in 0..4 {
        pts.push(Landmark3 {
            x: 0.0,
            y: bridge_y[i],
            z: bridge_z[i],
        });
    }
    // 32..=36: under-nose row; 34 is the center point.
    for i in 0..5 {
        let s = i as f64 / 4.0 - 0.5;
        pts.push(Landmark3 {
            x: 0.32 * s,
            y: 0.13 + 0.02 * (1.0 - (2.0 * s).abs()),
            z: 0.25 + 0.08 * (1.0 - (2.0 * s).abs()),
        });
    }
    // 37..=42 and 43..=48: eye rings.
    for side in [-1.0, 1.0] {
        let cx = side * 0.42;
        let cy = -0.38;
        for i in 0..6 {
            let ang = std::f64::consts::PI * 2.0 * i as f64 / 6.0;
            pts.push(Landmark3 {
                x: cx + 0.13 * ang.cos(),
                y: cy + 0.06 * ang.sin(),
                z: 0.05,
            });
        }
    }
    // 49..=60: outer lip, starting at the image-left corner, over the top.
    for i in 0..12 {
        let ang = std::f64::consts::PI - std::f64::consts::PI * 2.0 * i as f64 / 12.0;
        pts.push(Landmark3 {
            x: 0.28 * ang.cos(),
            y: 0.45 - 0.12 * ang.sin(),
            z: 0.15,
        });
    }
    // 61..=68: inner lip.
    for i in 0..8 {
        let ang = std::f64::consts::PI - std::f64::consts::PI * 2.0 * i as f64 / 8.0;
        pts.push(Landmark3 {
            x: 0.20 * ang.cos(),
            y: 0.45 - 0.05 * ang.sin(),
            z: 0.15,
        });
    }
    pts
}

/// Center of the 17-point mask region of the base face; the aspect mode
/// pivots about it.
const MASK_REGION_CY: f64 = 0.584166;
/// y-to-x compression ratio that makes the aspect field orthogonal to
/// uniform scaling on the mask subset.
const ASPECT_FLATTEN: f64 = 1.729112;
/// Fixed admixture of the aspect field into the chin mode; decorrelates
/// the two after similarity alignment so the corpus has three distinct
/// variance directions.
const CHIN_ASPECT_MIX: f64 = 0.366993;

/// Applies the shape modes to the base geometry. All displacement fields
/// are evaluated at the base coordinates.
fn apply_modes(pts: &mut [Landmark3], weights: &[f64; 3]) {
    let aspect_w = weights[0] + CHIN_ASPECT_MIX * weights[1];
    let chin_w = weights[1];
    let asym_w = weights[2];

    for (i, p) in pts.iter_mut().enumerate() {
        let idx = i + 1; // 1-based landmark index
        let (x0, y0) = (p.x, p.y);
        let mut dx = 0.0;
        let mut dy = 0.0;

        // Aspect: wider and flatter (or narrower and longer) about the
        // mask-region center.
        dx += aspect_w * 0.5 * x0;
        dy += aspect_w * -ASPECT_FLATTEN * (y0 - MASK_REGION_CY);

        // Chin profile: a tight bump at the chin tip, pulling the mouth
        // and under-nose row along.
        if idx <= 17 {
            let phi = std::f64::consts::PI * (idx - 1) as f64 / 16.0;
            dy += chin_w * 0.9 * phi.sin().powi(4);
        } else if (49..=68).contains(&idx) {
            dy += chin_w * 0.30;
        } else if (32..=36).contains(&idx) {
            dy += chin_w * 0.12;
        }

        // Asymmetry: the chin drifts sideways, the nose follows.
        if idx <= 17 {
            let phi = std::f64::consts::PI * (idx - 1) as f64 / 16.0;
            dx += asym_w * 0.78 * phi.sin();
        } else if idx >= 28 {
            dx += asym_w * 0.39;
        }

        p.x = x0 + dx;
        p.y = y0 + dy;
    }
}

/// Produces the 68 landmarks of a parametric face in the unit frame,
/// with yaw realized as a depth-dependent horizontal parallax.
pub fn face_landmarks(params: &FaceParams) -> Shape {
    let mut pts = base_face();
    apply_modes(&mut pts, &params.mode_weights);
    let (sin, cos) = params.yaw.sin_cos();
    Shape::new(
        pts.iter()
            .map(|p| Point::new(p.x * cos + p.z * sin, p.y))
            .collect(),
    )
    .expect("synthetic landmarks are finite")
}

fn sample_params(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> FaceParams {
    let mut weights = [0.0; 3];
    for (m, w) in weights.iter_mut().enumerate().take(cfg.modes) {
        let normal = Normal::new(0.0, MODE_SIGMAS[m]).expect("valid sigma");
        *w = normal.sample(rng);
    }
    let yaw = if cfg.yaw_range > 0.0 {
        rng.gen_range(-cfg.yaw_range..=cfg.yaw_range)
    } else {
        0.0
    };
    FaceParams {
        mode_weights: weights,
        yaw,
    }
}

fn sample_pose(rng: &mut ChaCha8Rng, size: f64) -> SimilarityTransform {
    let scale = size * rng.gen_range(0.16..0.21);
    let rotation = rng.gen_range(-0.12..0.12);
    let tx = size * (0.5 + rng.gen_range(-0.03..0.03));
    let ty = size * (0.47 + rng.gen_range(-0.03..0.03));
    SimilarityTransform::new(scale, rotation, Point::new(tx, ty)).expect("valid pose")
}

/// Generates a deterministic corpus of synthetic faces.
pub fn generate_cases(cfg: &SynthConfig) -> Result<Vec<SynthCase>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = cfg.image_size as f64;
    let mut cases = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let params = sample_params(&mut rng, cfg);
        let pose = sample_pose(&mut rng, size);
        let clean = pose.apply(&face_landmarks(&params));
        let noisy = if cfg.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
            Shape::new(
                clean
                    .iter()
                    .map(|p| {
                        Point::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng))
                    })
                    .collect(),
            )?
        } else {
            clean.clone()
        };
        cases.push(SynthCase {
            name: format!("case_{i:04}"),
            clean,
            noisy,
            yaw: params.yaw,
            label: ClassLabel::None,
        });
    }
    Ok(cases)
}

/// The fixed 16-triangle topology over the 17 mask landmarks (0-based):
/// a fan from the nose-bottom point to the jaw chain, closed by two
/// triangles against the nose bridge.
pub fn canonical_triangulation() -> Vec<[usize; 3]> {
    let bridge = 15;
    let bottom = 16;
    let mut tris = vec![[bridge, 0, bottom], [bridge, bottom, 14]];
    for j in 0..14 {
        tris.push([bottom, j, j + 1]);
    }
    tris
}

// ---------------------------------------------------------------------------
// Flat-shaded rendering
// ---------------------------------------------------------------------------

const SKIN: Rgba<u8> = Rgba([229, 184, 143, 255]);
const BACKGROUND: Rgba<u8> = Rgba([58, 66, 86, 255]);
const EYE: Rgba<u8> = Rgba([72, 56, 41, 255]);
const BROW: Rgba<u8> = Rgba([52, 38, 28, 255]);
const LIP: Rgba<u8> = Rgba([163, 84, 80, 255]);
const NOSE_SHADOW: Rgba<u8> = Rgba([188, 142, 108, 255]);

/// Even-odd scanline fill of a closed polygon.
fn fill_polygon(img: &mut RgbaImage, polygon: &[Point], color: Rgba<u8>) {
    if polygon.len() < 3 {
        return;
    }
    let h = img.height() as i64;
    let w = img.width() as i64;
    let y_min = polygon.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_max = polygon.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = (y_min.ceil() as i64).max(0);
    let row_hi = (y_max.floor() as i64).min(h - 1);

    for row in row_lo..=row_hi {
        let y = row as f64;
        let mut xs: Vec<f64> = Vec::new();
        for i in 0..polygon.len() {
            let a = polygon[i];
            let b = polygon[(i + 1) % polygon.len()];
            if (a.y <= y && y < b.y) || (b.y <= y && y < a.y) {
                let t = (y - a.y) / (b.y - a.y);
                xs.push(a.x + t * (b.x - a.x));
            }
        }
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for pair in xs.chunks_exact(2) {
            let x_lo = (pair[0].ceil() as i64).max(0);
            let x_hi = (pair[1].floor() as i64).min(w - 1);
            for x in x_lo..=x_hi {
                img.put_pixel(x as u32, row as u32, color);
            }
        }
    }
}

/// Draws a thick-ish polyline by stamping 2x2 blocks along each segment.
fn draw_polyline(img: &mut RgbaImage, pts: &[Point], color: Rgba<u8>) {
    let w = img.width() as i64;
    let h = img.height() as i64;
    for seg in pts.windows(2) {
        let steps = (seg[0].distance(seg[1]).ceil() as usize * 2).max(1);
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let p = seg[0] + (seg[1] - seg[0]) * t;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let x = p.x.floor() as i64 + dx;
                let y = p.y.floor() as i64 + dy;
                if x >= 0 && y >= 0 && x < w && y < h {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
}

/// Renders a flat-shaded face from its 68 landmarks (pixel coordinates).
pub fn render_face(landmarks: &Shape, size: u32) -> RgbaImage {
    let mut img = RgbaImage::from_pixel(size, size, BACKGROUND);
    let lm = |i: usize| landmarks[i - 1]; // 1-based accessor

    // Face region: the jaw chain closed by an elliptical forehead arc.
    let mut outline: Vec<Point> = (1..=17).map(lm).collect();
    let left_ear = lm(1);
    let right_ear = lm(17);
    let mid = (left_ear + right_ear) * 0.5;
    let half = (right_ear - mid) * 1.0;
    let up = Point::new(half.y, -half.x); // perpendicular, away from the chin
    for k in 1..14 {
        let ang = std::f64::consts::PI * k as f64 / 14.0;
        outline.push(mid + half * ang.cos() + up * (1.05 * ang.sin()));
    }
    fill_polygon(&mut img, &outline, SKIN);

    // Eyes.
    let left_eye: Vec<Point> = (37..=42).map(lm).collect();
    let right_eye: Vec<Point> = (43..=48).map(lm).collect();
    fill_polygon(&mut img, &left_eye, EYE);
    fill_polygon(&mut img, &right_eye, EYE);

    // Brows.
    let left_brow: Vec<Point> = (18..=22).map(lm).collect();
    let right_brow: Vec<Point> = (23..=27).map(lm).collect();
    draw_polyline(&mut img, &left_brow, BROW);
    draw_polyline(&mut img, &right_brow, BROW);

    // Nose: bridge line plus the under-nose row.
    let bridge: Vec<Point> = (28..=31).map(lm).collect();
    let nostrils: Vec<Point> = (32..=36).map(lm).collect();
    draw_polyline(&mut img, &bridge, NOSE_SHADOW);
    draw_polyline(&mut img, &nostrils, NOSE_SHADOW);

    // Mouth.
    let mut mouth: Vec<Point> = (49..=60).map(lm).collect();
    mouth.push(lm(49));
    fill_polygon(&mut img, &mouth, LIP);

    img
}

/// Renders one of the generated cases.
pub fn render_case(case: &SynthCase, size: u32) -> RgbaImage {
    render_face(&case.clean, size)
}

// ---------------------------------------------------------------------------
// Mask templates
// ---------------------------------------------------------------------------

const MASK_BASE: [f64; 3] = [86.0, 125.0, 215.0];

/// Builds a procedurally drawn mask template for the given view.
///
/// The template's 17 landmarks are the canonical face's mask landmarks at
/// the view's yaw, fitted to the canvas; the art fills exactly the
/// canonical triangulation of those landmarks, so the drawn lower boundary
/// runs through the annotated jaw chain.
pub fn make_template(view: View, size: u32) -> MaskTemplate {
    let yaw = match view {
        View::Front => 0.0,
        View::LeftProfile => -TEMPLATE_PROFILE_YAW,
        View::RightProfile => TEMPLATE_PROFILE_YAW,
    };
    let face = face_landmarks(&FaceParams {
        mode_weights: [0.0; 3],
        yaw,
    });
    let mask_pts: Vec<Point> = MASK17_FACE_INDICES
        .iter()
        .map(|&i| face[i - 1])
        .collect();

    // Fit the landmark bounding box into the central 72% of the canvas.
    let min_x = mask_pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = mask_pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = mask_pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = mask_pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let extent = (max_x - min_x).max(max_y - min_y);
    let scale = size as f64 * 0.72 / extent;
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);
    let center = size as f64 * 0.5;
    let landmarks = Shape::new(
        mask_pts
            .iter()
            .map(|p| Point::new(center + scale * (p.x - cx), center + scale * (p.y - cy)))
            .collect(),
    )
    .expect("template landmarks are finite");

    let mut image = RgbaImage::from_pixel(size, size, Rgba([0, 0, 0, 0]));
    let triangulation = canonical_triangulation();
    let span_y = (max_y - min_y) * scale;
    let top_y = center - scale * (cy - min_y);

    for tri in &triangulation {
        let verts = [landmarks[tri[0]], landmarks[tri[1]], landmarks[tri[2]]];
        fill_triangle_shaded(&mut image, &verts, top_y, span_y);
    }

    MaskTemplate::new(
        format!("synthetic_{view}"),
        view,
        image,
        landmarks,
        triangulation,
    )
    .expect("procedural template is valid")
}

/// Fills one triangle with the pleated mask shading: the base color with
/// darker horizontal bands at fixed relative heights.
fn fill_triangle_shaded(img: &mut RgbaImage, tri: &[Point; 3], top_y: f64, span_y: f64) {
    let double_area = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
    if double_area == 0.0 {
        return;
    }
    let w = img.width() as i64;
    let h = img.height() as i64;
    let x0 = (tri.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor() as i64).max(0);
    let x1 = (tri.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil() as i64).min(w - 1);
    let y0 = (tri.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor() as i64).max(0);
    let y1 = (tri.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil() as i64).min(h - 1);

    for py in y0..=y1 {
        for px in x0..=x1 {
            let p = Point::new(px as f64, py as f64);
            let l0 = (tri[1] - p).cross(tri[2] - p) / double_area;
            let l1 = (tri[2] - p).cross(tri[0] - p) / double_area;
            let l2 = (tri[0] - p).cross(tri[1] - p) / double_area;
            if l0 < -1e-9 || l1 < -1e-9 || l2 < -1e-9 {
                continue;
            }
            let rel = ((py as f64 - top_y) / span_y).clamp(0.0, 1.0);
            let band = (0.30..0.38).contains(&rel)
                || (0.50..0.58).contains(&rel)
                || (0.70..0.78).contains(&rel);
            let f = if band { 0.82 } else { 1.0 };
            img.put_pixel(
                px as u32,
                py as u32,
                Rgba([
                    (MASK_BASE[0] * f).round() as u8,
                    (MASK_BASE[1] * f).round() as u8,
                    (MASK_BASE[2] * f).round() as u8,
                    255,
                ]),
            );
        }
    }
}

/// Builds the standard three-view template registry.
pub fn make_template_registry(size: u32) -> Vec<MaskTemplate> {
    vec![
        make_template(View::Front, size),
        make_template(View::LeftProfile, size),
        make_template(View::RightProfile, size),
    ]
}
