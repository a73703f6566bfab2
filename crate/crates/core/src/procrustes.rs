//! Pairwise and generalized Procrustes alignment.
//!
//! The pairwise solve is the closed-form least-squares similarity (the 2-D
//! problem has an analytic optimum, so no iteration is needed). Generalized
//! alignment iterates align-to-mean / re-mean / renormalize until the mean
//! stops moving, which is a power iteration on the sum of per-shape orbit
//! projectors; its recorded sum of squares is non-increasing.

use crate::error::{Error, Result};
use crate::shape::{Point, Shape, SimilarityTransform};

/// Default convergence threshold on RMS mean displacement.
pub const GPA_DEFAULT_TOL: f64 = 1e-7;
/// Default iteration cap.
pub const GPA_DEFAULT_MAX_ITER: usize = 100;

/// Closed-form least-squares similarity aligning `src` onto `dst`.
///
/// Minimizes `sum_k ||dst_k - (s*R*src_k + t)||^2` over scale `s > 0`,
/// rotation `R` (no reflection) and translation `t`. Returns the transform
/// and the minimized sum of squares.
pub fn solve_similarity(src: &Shape, dst: &Shape) -> Result<(SimilarityTransform, f64)> {
    if src.len() != dst.len() {
        return Err(Error::ShapeArity {
            expected: src.len(),
            actual: dst.len(),
        });
    }
    if src.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "need at least 2 points for similarity alignment, got {}",
            src.len()
        )));
    }

    let src_c = src.centroid();
    let dst_c = dst.centroid();

    // Cross-covariance of the centered shapes, folded down to the two
    // scalars that matter in 2-D: a = <u, v>, b = <u x v>.
    let mut a = 0.0;
    let mut b = 0.0;
    let mut src_ss = 0.0;
    let mut dst_ss = 0.0;
    for (ps, pd) in src.iter().zip(dst.iter()) {
        let u = *ps - src_c;
        let v = *pd - dst_c;
        a += u.dot(v);
        b += u.cross(v);
        src_ss += u.dot(u);
        dst_ss += v.dot(v);
    }

    if src_ss <= 0.0 {
        return Err(Error::DegenerateShape(
            "source shape has all points coincident".into(),
        ));
    }
    let scale_num = (a * a + b * b).sqrt();
    if scale_num <= 0.0 {
        // Optimal scale would be zero; the target collapses to a point in
        // the fitted frame and no rotation is recoverable.
        return Err(Error::DegenerateShape(
            "target shape is degenerate for similarity alignment".into(),
        ));
    }

    let scale = scale_num / src_ss;
    let rotation = b.atan2(a);
    let (sin, cos) = rotation.sin_cos();
    let translation = Point::new(
        dst_c.x - scale * (cos * src_c.x - sin * src_c.y),
        dst_c.y - scale * (sin * src_c.x + cos * src_c.y),
    );

    // Minimized objective: ||v||^2 - (a^2 + b^2) / ||u||^2, clamped against
    // cancellation at exact fits.
    let residual = (dst_ss - scale_num * scale_num / src_ss).max(0.0);

    Ok((
        SimilarityTransform {
            scale,
            rotation,
            translation,
        },
        residual,
    ))
}

/// Options for generalized Procrustes alignment.
#[derive(Debug, Clone, Copy)]
pub struct GpaOptions {
    /// Stop once the RMS per-point displacement of the mean falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GpaOptions {
    fn default() -> Self {
        GpaOptions {
            tol: GPA_DEFAULT_TOL,
            max_iter: GPA_DEFAULT_MAX_ITER,
        }
    }
}

/// Output of [`generalized_procrustes`].
#[derive(Debug, Clone)]
pub struct GpaResult {
    /// Every corpus shape optimally aligned to the final mean.
    pub aligned: Vec<Shape>,
    /// The final mean: centroid at the origin, RMS point radius 1, and the
    /// first landmark rotated onto the positive x half-axis so that the
    /// model frame does not depend on corpus order.
    pub mean: Shape,
    pub iterations: usize,
    /// False if `max_iter` was exhausted before the mean settled.
    pub converged: bool,
    /// Total Procrustes sum of squares recorded at each iteration (plus the
    /// final re-alignment pass). Non-increasing.
    pub ss_trace: Vec<f64>,
}

/// Iteratively aligns a corpus of shapes to their evolving mean.
///
/// All shapes must share the same point count (at least 3) and the corpus
/// must hold at least 2 shapes. Failure to converge is reported through
/// [`GpaResult::converged`], not as an error.
pub fn generalized_procrustes(corpus: &[Shape], opts: &GpaOptions) -> Result<GpaResult> {
    if corpus.len() < 2 {
        return Err(Error::CorpusTooSmall {
            min: 2,
            got: corpus.len(),
        });
    }
    let n = corpus[0].len();
    if n < 3 {
        return Err(Error::InvalidShape(format!(
            "need at least 3 points per shape for alignment, got {n}"
        )));
    }
    for s in corpus {
        if s.len() != n {
            return Err(Error::ShapeArity {
                expected: n,
                actual: s.len(),
            });
        }
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "gpa tol must be > 0 and max_iter >= 1".into(),
        ));
    }

    let mut mean = corpus[0].normalized()?;
    let mut ss_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let (aligned, ss) = align_all(corpus, &mean)?;
        ss_trace.push(ss);

        let new_mean = pointwise_mean(&aligned).normalized()?;
        let movement = rms_displacement(&mean, &new_mean);
        mean = new_mean;
        if movement < opts.tol {
            converged = true;
            break;
        }
    }

    let mean = canonical_orientation(&mean);
    // Final pass so the returned shapes live in the canonical mean's frame.
    let (aligned, ss) = align_all(corpus, &mean)?;
    ss_trace.push(ss);

    Ok(GpaResult {
        aligned,
        mean,
        iterations,
        converged,
        ss_trace,
    })
}

fn align_all(corpus: &[Shape], mean: &Shape) -> Result<(Vec<Shape>, f64)> {
    let mut aligned = Vec::with_capacity(corpus.len());
    let mut total = 0.0;
    for s in corpus {
        let (t, residual) = solve_similarity(s, mean)?;
        aligned.push(t.apply(s));
        total += residual;
    }
    Ok((aligned, total))
}

fn pointwise_mean(shapes: &[Shape]) -> Shape {
    let n = shapes[0].len();
    let inv = 1.0 / shapes.len() as f64;
    let mut pts = vec![Point::ZERO; n];
    // Fixed reduction order (corpus order) keeps results bit-identical
    // across runs.
    for s in shapes {
        for (acc, p) in pts.iter_mut().zip(s.iter()) {
            *acc = *acc + *p;
        }
    }
    Shape::new(pts.into_iter().map(|p| p * inv).collect()).expect("mean of finite shapes is finite")
}

fn rms_displacement(a: &Shape, b: &Shape) -> f64 {
    let ss: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(p, q)| (*p - *q).dot(*p - *q))
        .sum();
    (ss / a.len() as f64).sqrt()
}

/// Rotates a normalized mean so its first landmark sits on the positive x
/// half-axis. The converged mean is otherwise only determined up to a global
/// rotation that depends on corpus order.
fn canonical_orientation(mean: &Shape) -> Shape {
    let anchor = mean[0];
    let r = anchor.norm();
    if r < 1e-12 {
        return mean.clone();
    }
    let angle = anchor.y.atan2(anchor.x);
    let rot = SimilarityTransform {
        scale: 1.0,
        rotation: -angle,
        translation: Point::ZERO,
    };
    rot.apply(mean)
}
