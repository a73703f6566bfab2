//! Mask-template overlay: view selection, landmark correspondence,
//! piecewise-affine warping, and alpha compositing.
//!
//! Templates carry 17 annotated landmarks corresponding to face landmarks
//! 2..16 plus 30 and 34 of the 1-based 68-point convention: the 15 jawline
//! points, then the nose-bridge point, then the nose-bottom point.

pub mod warp;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fit, FitOptions, ShapeModel};
use crate::shape::{Point, Shape};
pub use warp::{warp_piecewise_affine, AffineMap, WarpedFragment};

/// Face landmark indices (1-based, 68-point convention) that correspond to
/// the 17 template landmarks, in template order.
pub const MASK17_FACE_INDICES: [usize; 17] =
    [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 30, 34];

/// Template-order position of the nose-bridge landmark.
pub const NOSE_BRIDGE_POS: usize = 15;
/// Template-order position of the nose-bottom landmark.
pub const NOSE_BOTTOM_POS: usize = 16;

/// Face landmark indices (1-based) used by the sparse six-point baseline:
/// nose bridge, both cheeks, and three chin points.
pub const SLA_FACE_INDICES: [usize; 6] = [28, 2, 16, 8, 9, 10];

/// Template-order positions corresponding to [`SLA_FACE_INDICES`]. The
/// face's landmark 28 pairs with the template's nose-bridge point (its
/// annotation for face index 30), which is the closest annotated landmark.
pub const SLA_TEMPLATE_POSITIONS: [usize; 6] = [NOSE_BRIDGE_POS, 0, 14, 6, 7, 8];

/// Default yaw-ratio magnitude above which a profile template is chosen.
pub const DEFAULT_VIEW_THRESHOLD: f64 = 0.25;

/// Head view a mask template is drawn for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Front,
    LeftProfile,
    RightProfile,
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            View::Front => "front",
            View::LeftProfile => "left_profile",
            View::RightProfile => "right_profile",
        })
    }
}

/// Classification label attached to an input face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    /// Mask worn correctly; the overlay is bypassed.
    Correct,
    /// Mask worn incorrectly; a new mask is overlaid in place.
    Incorrect,
    /// No mask present.
    None,
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassLabel::Correct => "correct",
            ClassLabel::Incorrect => "incorrect",
            ClassLabel::None => "none",
        })
    }
}

/// An RGBA mask template with its 17 annotated landmarks and fixed
/// triangulation.
#[derive(Debug, Clone)]
pub struct MaskTemplate {
    pub name: String,
    pub view: View,
    pub image: RgbaImage,
    /// Exactly 17 points in template pixel coordinates, ordered per
    /// [`MASK17_FACE_INDICES`].
    pub landmarks: Shape,
    /// Vertex-index triples into `landmarks` (0-based).
    pub triangulation: Vec<[usize; 3]>,
}

impl MaskTemplate {
    pub fn new(
        name: String,
        view: View,
        image: RgbaImage,
        landmarks: Shape,
        triangulation: Vec<[usize; 3]>,
    ) -> Result<Self> {
        if landmarks.len() != 17 {
            return Err(Error::InvalidTemplate {
                name,
                reason: format!("expected 17 landmarks, got {}", landmarks.len()),
            });
        }
        let (w, h) = (image.width() as f64, image.height() as f64);
        for (i, p) in landmarks.iter().enumerate() {
            if p.x < 0.0 || p.y < 0.0 || p.x > w - 1.0 || p.y > h - 1.0 {
                return Err(Error::InvalidTemplate {
                    name,
                    reason: format!("landmark {i} at ({}, {}) is outside the image", p.x, p.y),
                });
            }
        }
        if triangulation.is_empty() {
            return Err(Error::InvalidTemplate {
                name,
                reason: "empty triangulation".into(),
            });
        }
        for (i, tri) in triangulation.iter().enumerate() {
            if tri.iter().any(|&v| v >= 17) {
                return Err(Error::InvalidTemplate {
                    name,
                    reason: format!("triangle {i} has a vertex index outside 0..17"),
                });
            }
            let a = landmarks[tri[0]];
            let b = landmarks[tri[1]];
            let c = landmarks[tri[2]];
            if (b - a).cross(c - a) == 0.0 {
                return Err(Error::InvalidTemplate {
                    name,
                    reason: format!("triangle {i} is degenerate on the template landmarks"),
                });
            }
        }
        Ok(MaskTemplate {
            name,
            view,
            image,
            landmarks,
            triangulation,
        })
    }
}

/// A face image's 68-point annotation plus its classification label.
#[derive(Debug, Clone)]
pub struct FaceAnnotation {
    /// Exactly 68 landmarks (1-based convention documented at the indices
    /// constants; stored 0-based).
    pub landmarks: Shape,
    pub class_label: ClassLabel,
}

impl FaceAnnotation {
    pub fn new(landmarks: Shape, class_label: ClassLabel) -> Result<Self> {
        if landmarks.len() != 68 {
            return Err(Error::ShapeArity {
                expected: 68,
                actual: landmarks.len(),
            });
        }
        Ok(FaceAnnotation {
            landmarks,
            class_label,
        })
    }

    /// Landmark by 1-based index of the 68-point convention.
    pub fn landmark_1based(&self, index: usize) -> Point {
        self.landmarks[index - 1]
    }
}

/// An overlay work item: a face image plus its annotation.
#[derive(Debug, Clone)]
pub struct OverlayJob {
    pub image: RgbaImage,
    pub face: FaceAnnotation,
}

/// Overlay algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMethod {
    /// Sparse six-landmark baseline with a single affine fit.
    Sla,
    /// Dense 17-landmark piecewise-affine alignment.
    Dla,
    /// Dense alignment on shape-model-regularized landmarks.
    DlaSsa,
}

impl std::fmt::Display for MaskMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMethod::Sla => "sla",
            MaskMethod::Dla => "dla",
            MaskMethod::DlaSsa => "dla_ssa",
        })
    }
}

/// Output of [`overlay_pipeline`].
#[derive(Debug, Clone)]
pub struct OverlayResult {
    /// Composited image; same dimensions as the input.
    pub image: RgbaImage,
    /// The face points that drove the warp (17 for the dense methods, 6
    /// for the sparse baseline, empty on bypass).
    pub used_landmarks: Shape,
    pub template_used: Option<String>,
    /// `None` when the overlay was bypassed for a correctly-masked input.
    pub method: Option<MaskMethod>,
    /// The warped mask fragment, when one was rendered.
    pub fragment: Option<WarpedFragment>,
    /// Fit diagnostics for the regularized method.
    pub fit_residual: Option<f64>,
    pub fit_weights: Option<Vec<f64>>,
}

/// Selects the 17 mask-relevant landmarks (jaw 2..16, nose bridge 30,
/// nose bottom 34; 1-based) from a 68-point annotation.
pub fn select_landmarks_17(face: &FaceAnnotation) -> Shape {
    Shape::new(
        MASK17_FACE_INDICES
            .iter()
            .map(|&i| face.landmark_1based(i))
            .collect(),
    )
    .expect("subset of a finite shape is finite")
}

/// Yaw proxy `(d_left - d_right) / (d_left + d_right)` built from the
/// distances of the nose bridge (28) to the outer jaw points (1 and 17).
/// Negative values mean the nose sits nearer the image-left jaw end.
pub fn yaw_ratio(face: &FaceAnnotation) -> f64 {
    let bridge = face.landmark_1based(28);
    let left = face.landmark_1based(1);
    let right = face.landmark_1based(17);
    let d_left = bridge.distance(left);
    let d_right = bridge.distance(right);
    let denom = d_left + d_right;
    if denom <= 0.0 {
        0.0
    } else {
        (d_left - d_right) / denom
    }
}

/// Picks the template whose view matches the face's yaw proxy: front when
/// `|r| <= threshold` (ties break toward front), otherwise the profile on
/// the side the nose leans toward.
pub fn select_template<'a>(
    face: &FaceAnnotation,
    registry: &'a [MaskTemplate],
    threshold: f64,
) -> Result<&'a MaskTemplate> {
    for view in [View::Front, View::LeftProfile, View::RightProfile] {
        if !registry.iter().any(|t| t.view == view) {
            return Err(Error::RegistryIncomplete(view.to_string()));
        }
    }
    let r = yaw_ratio(face);
    let view = if r.abs() <= threshold {
        View::Front
    } else if r < 0.0 {
        View::LeftProfile
    } else {
        View::RightProfile
    };
    Ok(registry
        .iter()
        .find(|t| t.view == view)
        .expect("registry checked complete above"))
}

/// Which landmark set the shape model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkSubset {
    /// 17-point mask subset (default).
    Mask17,
    /// All 68 points; the mask subset is taken after fitting.
    Full68,
}

/// Options for [`regularize_landmarks`] and [`overlay_pipeline`].
#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    pub fit: FitOptions,
    pub subset: LandmarkSubset,
    pub view_threshold: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            fit: FitOptions::default(),
            subset: LandmarkSubset::Mask17,
            view_threshold: DEFAULT_VIEW_THRESHOLD,
        }
    }
}

/// Replaces detector landmarks with the shape model's best approximation,
/// returning the 17 mask landmarks in image space.
pub fn regularize_landmarks(
    face: &FaceAnnotation,
    model: &ShapeModel,
    opts: &PipelineOptions,
) -> Result<Shape> {
    match opts.subset {
        LandmarkSubset::Mask17 => {
            let observed = select_landmarks_17(face);
            let result = fit(model, &observed, &opts.fit)?;
            Ok(result.fitted_shape)
        }
        LandmarkSubset::Full68 => {
            let result = fit(model, &face.landmarks, &opts.fit)?;
            let fitted = FaceAnnotation::new(result.fitted_shape, face.class_label)?;
            Ok(select_landmarks_17(&fitted))
        }
    }
}

/// Straight-alpha "over" compositing of a fragment onto a base image.
///
/// Pixels outside the fragment footprint, and pixels under fully
/// transparent fragment texels, are preserved bit-exactly. Out-of-bounds
/// fragment regions are clipped.
pub fn composite(face: &RgbaImage, fragment: &RgbaImage, offset: (i64, i64)) -> RgbaImage {
    let mut out = face.clone();
    for (fx, fy, src) in fragment.enumerate_pixels() {
        let tx = offset.0 + fx as i64;
        let ty = offset.1 + fy as i64;
        if tx < 0 || ty < 0 || tx >= face.width() as i64 || ty >= face.height() as i64 {
            continue;
        }
        let alpha = src.0[3];
        if alpha == 0 {
            continue;
        }
        let dst = out.get_pixel(tx as u32, ty as u32).0;
        let a = alpha as f64 / 255.0;
        let blend = |s: u8, d: u8| -> u8 { (a * s as f64 + (1.0 - a) * d as f64).round() as u8 };
        let out_alpha = (alpha as f64 + (1.0 - a) * dst[3] as f64).round() as u8;
        out.put_pixel(
            tx as u32,
            ty as u32,
            Rgba([
                blend(src.0[0], dst[0]),
                blend(src.0[1], dst[1]),
                blend(src.0[2], dst[2]),
                out_alpha,
            ]),
        );
    }
    out
}

/// Runs the full overlay: view selection, landmark correspondence
/// (regularized, dense, or sparse), warping, and compositing.
///
/// Inputs labeled `correct` bypass the overlay and return the input image
/// unchanged.
pub fn overlay_pipeline(
    job: &OverlayJob,
    model: &ShapeModel,
    registry: &[MaskTemplate],
    method: MaskMethod,
    opts: &PipelineOptions,
) -> Result<OverlayResult> {
    if job.face.class_label == ClassLabel::Correct {
        return Ok(OverlayResult {
            image: job.image.clone(),
            used_landmarks: Shape::new(Vec::new())?,
            template_used: None,
            method: None,
            fragment: None,
            fit_residual: None,
            fit_weights: None,
        });
    }

    let template = select_template(&job.face, registry, opts.view_threshold)?;

    let mut fit_residual = None;
    let mut fit_weights = None;

    let (used_landmarks, fragment) = match method {
        MaskMethod::DlaSsa => {
            let observed = select_landmarks_17(&job.face);
            let fitted = match opts.subset {
                LandmarkSubset::Mask17 => {
                    let result = fit(model, &observed, &opts.fit)?;
                    fit_residual = Some(result.residual);
                    fit_weights = Some(result.b.clone());
                    result.fitted_shape
                }
                LandmarkSubset::Full68 => {
                    let result = fit(model, &job.face.landmarks, &opts.fit)?;
                    fit_residual = Some(result.residual);
                    fit_weights = Some(result.b.clone());
                    let fitted =
                        FaceAnnotation::new(result.fitted_shape, job.face.class_label)?;
                    select_landmarks_17(&fitted)
                }
            };
            let frag = warp_piecewise_affine(
                &template.image,
                &template.landmarks,
                &fitted,
                &template.triangulation,
            )?;
            (fitted, frag)
        }
        MaskMethod::Dla => {
            let target = select_landmarks_17(&job.face);
            let frag = warp_piecewise_affine(
                &template.image,
                &template.landmarks,
                &target,
                &template.triangulation,
            )?;
            (target, frag)
        }
        MaskMethod::Sla => {
            let src: Vec<Point> = SLA_TEMPLATE_POSITIONS
                .iter()
                .map(|&pos| template.landmarks[pos])
                .collect();
            let dst: Vec<Point> = SLA_FACE_INDICES
                .iter()
                .map(|&i| job.face.landmark_1based(i))
                .collect();
            let affine = AffineMap::fit_least_squares(&src, &dst)?;
            // One global affine: every template landmark is sent through
            // the same map, and the piecewise warp then degenerates to it.
            let target = Shape::new(
                template.landmarks.iter().map(|&p| affine.apply(p)).collect(),
            )?;
            let frag = warp_piecewise_affine(
                &template.image,
                &template.landmarks,
                &target,
                &template.triangulation,
            )?;
            (Shape::new(dst)?, frag)
        }
    };

    let image = composite(&job.image, &fragment.image, fragment.offset);

    Ok(OverlayResult {
        image,
        used_landmarks,
        template_used: Some(template.name.clone()),
        method: Some(method),
        fragment: Some(fragment),
        fit_residual,
        fit_weights,
    })
}
