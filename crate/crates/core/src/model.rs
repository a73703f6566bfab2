//! PCA point-distribution shape models and constrained fitting.
//!
//! A corpus of landmark shapes is Procrustes-aligned, flattened into a
//! point distribution matrix (one row per shape), and eigen-decomposed.
//! The resulting model expresses any plausible shape as
//! `mean + modes * b`, and [`fit`] recovers both a similarity pose and the
//! mode weights `b` for a new observation by alternating two closed-form
//! substeps.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::procrustes::{generalized_procrustes, solve_similarity, GpaOptions};
use crate::shape::{Shape, SimilarityTransform};

/// Default fraction of total variance retained when choosing the mode count.
pub const DEFAULT_VARIANCE_FRACTION: f64 = 0.98;
/// Default convergence threshold on the fit objective decrease.
pub const FIT_DEFAULT_TOL: f64 = 1e-9;
/// Default fit iteration cap.
pub const FIT_DEFAULT_MAX_ITER: usize = 50;
/// Default mode-weight clamp, in standard deviations per mode.
pub const FIT_DEFAULT_CLAMP_SIGMAS: f64 = 3.0;

/// Eigenvalues below `largest * RANK_EPS` are treated as numerical zeros.
const RANK_EPS: f64 = 1e-12;

/// A linear statistical shape model: mean shape, orthonormal variance
/// modes, and per-mode variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    mean: DVector<f64>,
    /// `2N x t`, orthonormal columns, sign-normalized.
    modes: DMatrix<f64>,
    /// Length `t`, strictly positive, non-increasing.
    eigenvalues: Vec<f64>,
    n_points: usize,
}

impl ShapeModel {
    /// Reassembles a model from raw parts (e.g. a deserialized file),
    /// re-validating the invariants.
    pub fn from_parts(
        mean: Vec<f64>,
        modes_row_major: Vec<f64>,
        eigenvalues: Vec<f64>,
        n_points: usize,
    ) -> Result<Self> {
        let dim = 2 * n_points;
        let t = eigenvalues.len();
        if n_points < 3 {
            return Err(Error::InvalidParameter(format!(
                "shape model needs at least 3 points, got {n_points}"
            )));
        }
        if mean.len() != dim {
            return Err(Error::Arity {
                expected: dim,
                actual: mean.len(),
            });
        }
        if modes_row_major.len() != dim * t {
            return Err(Error::Arity {
                expected: dim * t,
                actual: modes_row_major.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite())
            || modes_row_major.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "shape model contains non-finite values".into(),
            ));
        }
        for w in eigenvalues.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidParameter(
                    "eigenvalues must be non-increasing".into(),
                ));
            }
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidParameter(
                "eigenvalues must be strictly positive".into(),
            ));
        }
        let modes = DMatrix::from_row_slice(dim, t, &modes_row_major);
        // Orthonormality check: P^T P = I within 1e-9.
        let gram = modes.transpose() * &modes;
        for i in 0..t {
            for j in 0..t {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - expected).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(
                        "mode columns are not orthonormal".into(),
                    ));
                }
            }
        }
        Ok(ShapeModel {
            mean: DVector::from_vec(mean),
            modes,
            eigenvalues,
            n_points,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Number of retained variance modes (`t`).
    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Mean shape in model space.
    pub fn mean_shape(&self) -> Shape {
        Shape::from_flat(self.mean.as_slice()).expect("model mean is finite")
    }

    pub fn mean_flat(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Mode matrix in row-major order (`2N x t`).
    pub fn modes_row_major(&self) -> Vec<f64> {
        let (rows, cols) = self.modes.shape();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(self.modes[(r, c)]);
            }
        }
        out
    }

    /// One mode column as a flat vector.
    pub fn mode(&self, j: usize) -> Vec<f64> {
        self.modes.column(j).iter().copied().collect()
    }
}

/// A freshly built model together with build diagnostics.
#[derive(Debug, Clone)]
pub struct ModelBuild {
    pub model: ShapeModel,
    /// Procrustes-aligned corpus rows (the point distribution matrix).
    pub aligned: Vec<Shape>,
    pub gpa_iterations: usize,
    pub gpa_converged: bool,
    /// Sum over the full eigen-spectrum, i.e. the total sample variance.
    pub total_variance: f64,
}

/// Builds a shape model from a landmark corpus.
///
/// Aligns the corpus with generalized Procrustes analysis, forms the
/// point distribution matrix, eigen-decomposes the sample covariance
/// (divisor `K - 1`), and keeps the smallest mode count whose cumulative
/// eigenvalue sum reaches `variance_fraction` of the total. Modes are
/// sign-normalized so the largest-magnitude component of each is positive.
///
/// A corpus of identical shapes yields a valid zero-mode model.
pub fn build_model(corpus: &[Shape], variance_fraction: f64) -> Result<ModelBuild> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "variance_fraction must be in (0, 1], got {variance_fraction}"
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::CorpusTooSmall {
            min: 2,
            got: corpus.len(),
        });
    }

    let gpa = generalized_procrustes(corpus, &GpaOptions::default())?;
    let k = gpa.aligned.len();
    let n = gpa.mean.len();
    let dim = 2 * n;

    // Point distribution matrix: one aligned, flattened shape per row.
    let mut pdm = DMatrix::zeros(k, dim);
    for (r, s) in gpa.aligned.iter().enumerate() {
        for (c, v) in s.flatten().into_iter().enumerate() {
            pdm[(r, c)] = v;
        }
    }

    // The model mean is the arithmetic mean of the rows (the aligned
    // corpus), which is what the covariance must be centered on.
    let mut mean = DVector::zeros(dim);
    for r in 0..k {
        for c in 0..dim {
            mean[c] += pdm[(r, c)];
        }
    }
    mean /= k as f64;

    let mut centered = pdm;
    for r in 0..k {
        for c in 0..dim {
            centered[(r, c)] -= mean[c];
        }
    }
    let covariance = centered.transpose() * &centered / (k as f64 - 1.0);

    let eigen = SymmetricEigen::new(covariance);
    // Deterministic ordering: descending eigenvalue, index as tiebreak.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        eigen.eigenvalues[j]
            .partial_cmp(&eigen.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });

    let total_variance: f64 = eigen.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let largest = eigen.eigenvalues[order[0]].max(0.0);

    // Rank cut: drop numerical zeros and anything beyond the sample rank.
    let max_rank = (k - 1).min(dim);
    let mut spectrum: Vec<(usize, f64)> = Vec::new();
    for &idx in &order {
        let l = eigen.eigenvalues[idx];
        if l > largest * RANK_EPS && l > 0.0 && spectrum.len() < max_rank {
            spectrum.push((idx, l));
        }
    }

    // Smallest t whose cumulative variance reaches the requested fraction.
    let mut t = 0;
    if total_variance > 0.0 {
        let mut cumulative = 0.0;
        for (i, &(_, l)) in spectrum.iter().enumerate() {
            cumulative += l;
            if cumulative >= variance_fraction * total_variance {
                t = i + 1;
                break;
            }
        }
        if t == 0 {
            t = spectrum.len();
        }
    }

    let mut modes = DMatrix::zeros(dim, t);
    let mut eigenvalues = Vec::with_capacity(t);
    for (j, &(idx, l)) in spectrum.iter().take(t).enumerate() {
        let col = eigen.eigenvectors.column(idx);
        // Sign convention: largest-magnitude component positive.
        let mut arg_max = 0;
        for r in 1..dim {
            if col[r].abs() > col[arg_max].abs() {
                arg_max = r;
            }
        }
        let sign = if col[arg_max] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..dim {
            modes[(r, j)] = sign * col[r];
        }
        eigenvalues.push(l);
    }

    Ok(ModelBuild {
        model: ShapeModel {
            mean,
            modes,
            eigenvalues,
            n_points: n,
        },
        aligned: gpa.aligned,
        gpa_iterations: gpa.iterations,
        gpa_converged: gpa.converged,
        total_variance,
    })
}

/// Reconstructs the model-space shape `mean + modes * b`.
pub fn reconstruct(model: &ShapeModel, b: &[f64]) -> Result<Shape> {
    if b.len() != model.mode_count() {
        return Err(Error::Arity {
            expected: model.mode_count(),
            actual: b.len(),
        });
    }
    let mut flat = model.mean.clone();
    if !b.is_empty() {
        flat += &model.modes * DVector::from_row_slice(b);
    }
    Shape::from_flat(flat.as_slice())
}

/// Projects a model-space shape onto the modes: `b = P^T (shape - mean)`.
///
/// This is the least-squares optimal weight vector for a fixed pose.
pub fn project(model: &ShapeModel, aligned: &Shape) -> Result<Vec<f64>> {
    if aligned.len() != model.n_points {
        return Err(Error::ShapeArity {
            expected: model.n_points,
            actual: aligned.len(),
        });
    }
    let delta = DVector::from_vec(aligned.flatten()) - &model.mean;
    Ok((model.modes.transpose() * delta).iter().copied().collect())
}

/// Options controlling [`fit`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Stop once the objective decreases by less than this between
    /// iterations.
    pub tol: f64,
    pub max_iter: usize,
    /// Each weight is clamped to `±clamp_sigmas * sqrt(eigenvalue)`.
    pub clamp_sigmas: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: FIT_DEFAULT_TOL,
            max_iter: FIT_DEFAULT_MAX_ITER,
            clamp_sigmas: FIT_DEFAULT_CLAMP_SIGMAS,
        }
    }
}

/// Result of fitting a shape model to an observed shape.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub pose: SimilarityTransform,
    /// Mode weights, clamped to the per-mode box constraint.
    pub b: Vec<f64>,
    /// `pose` applied to `reconstruct(model, b)`, in image space.
    pub fitted_shape: Shape,
    /// Final objective: squared distance between observation and fit.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value recorded at the end of each iteration.
    pub objective_trace: Vec<f64>,
    /// Per iteration: whether any weight hit the clamp that iteration.
    pub clamp_trace: Vec<bool>,
}

/// Fits pose and mode weights to an observed shape by alternating
/// minimization.
///
/// Each iteration solves the pose in closed form for the current weights,
/// then re-estimates the weights in the unposed frame and clamps them.
/// Both substeps are globally optimal for their subproblem, so the
/// objective is non-increasing whenever no clamp activates.
pub fn fit(model: &ShapeModel, observed: &Shape, opts: &FitOptions) -> Result<FitResult> {
    if observed.len() != model.n_points {
        return Err(Error::ShapeArity {
            expected: model.n_points,
            actual: observed.len(),
        });
    }
    if !(opts.clamp_sigmas > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "fit clamp_sigmas must be > 0 and max_iter >= 1".into(),
        ));
    }

    let bounds: Vec<f64> = model
        .eigenvalues
        .iter()
        .map(|&l| opts.clamp_sigmas * l.sqrt())
        .collect();

    let mut b = vec![0.0; model.mode_count()];
    let mut pose = SimilarityTransform::identity();
    let mut objective_trace = Vec::new();
    let mut clamp_trace = Vec::new();
    let mut prev_obj = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;

        // (a) pose step: closed-form similarity for the current weights.
        let model_shape = reconstruct(model, &b)?;
        let (new_pose, _) = solve_similarity(&model_shape, observed)?;
        pose = new_pose;

        // (b) shape step: project the unposed observation, then clamp.
        let unposed = pose.inverse().apply(observed);
        let mut clamped = false;
        b = project(model, &unposed)?;
        for (w, &bound) in b.iter_mut().zip(&bounds) {
            if w.abs() > bound {
                *w = w.clamp(-bound, bound);
                clamped = true;
            }
        }

        let fitted = pose.apply(&reconstruct(model, &b)?);
        let obj = observed.squared_distance(&fitted)?;
        objective_trace.push(obj);
        clamp_trace.push(clamped);

        if prev_obj - obj < opts.tol {
            converged = true;
            break;
        }
        prev_obj = obj;
    }

    let fitted_shape = pose.apply(&reconstruct(model, &b)?);
    let residual = observed.squared_distance(&fitted_shape)?;

    Ok(FitResult {
        pose,
        b,
        fitted_shape,
        residual,
        iterations,
        converged,
        objective_trace,
        clamp_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Point;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_shape(rng: &mut ChaCha8Rng, n: usize) -> Shape {
        Shape::new(
            (0..n)
                .map(|_| Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect(),
        )
        .unwrap()
    }

    fn random_transform(rng: &mut ChaCha8Rng) -> SimilarityTransform {
        SimilarityTransform::new(
            rng.gen_range(0.5..2.0),
            rng.gen_range(-2.5..2.5),
            Point::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)),
        )
        .unwrap()
    }

    /// A unit vector orthogonal to the similarity tangent directions of
    /// `base` (translations, scaling, rotation), built by Gram-Schmidt.
    /// Deviations along it survive Procrustes alignment unchanged to first
    /// order.
    fn orthogonal_mode(rng: &mut ChaCha8Rng, base: &Shape) -> Vec<f64> {
        let n = base.len();
        let dim = 2 * n;
        let flat = base.flatten();
        let mut rot = vec![0.0; dim];
        for i in 0..n {
            rot[2 * i] = -flat[2 * i + 1];
            rot[2 * i + 1] = flat[2 * i];
        }
        let mut tx = vec![0.0; dim];
        let mut ty = vec![0.0; dim];
        for i in 0..n {
            tx[2 * i] = 1.0;
            ty[2 * i + 1] = 1.0;
        }
        let references = [flat.clone(), rot, tx, ty];

        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for r in &references {
            let rr: f64 = r.iter().map(|x| x * x).sum();
            let vr: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi -= vr / rr * ri;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    fn add_flat(shape: &Shape, delta: &[f64], scale: f64) -> Shape {
        let mut flat = shape.flatten();
        for (f, d) in flat.iter_mut().zip(delta) {
            *f += scale * d;
        }
        Shape::from_flat(&flat).unwrap()
    }

    #[test]
    fn identical_corpus_gives_zero_mode_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_shape(&mut rng, 8);
        let corpus = vec![s.clone(); 5];
        let build = build_model(&corpus, 0.98).unwrap();
        assert_eq!(build.model.mode_count(), 0);
        // The mean is the normalized input up to the canonical rotation.
        let (t, residual) = solve_similarity(&s, &build.model.mean_shape()).unwrap();
        assert!(residual < 1e-12);
        assert_abs_diff_eq!(t.scale * s.rms_radius(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn two_shape_corpus_has_one_mode_with_known_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_shape(&mut rng, 6);
        let b = random_shape(&mut rng, 6);
        let build = build_model(&[a, b], 0.98).unwrap();
        assert_eq!(build.model.mode_count(), 1);

        // Two-sample covariance has a single eigenvalue ||r1 - r2||^2 / 2.
        let d: Vec<f64> = build.aligned[0]
            .flatten()
            .iter()
            .zip(build.aligned[1].flatten().iter())
            .map(|(x, y)| x - y)
            .collect();
        let d_norm_sq: f64 = d.iter().map(|x| x * x).sum();
        assert_abs_diff_eq!(
            build.model.eigenvalues()[0],
            d_norm_sq / 2.0,
            epsilon = 1e-12 * d_norm_sq
        );

        // The single mode is the normalized difference direction (up to
        // sign normalization).
        let mode = build.model.mode(0);
        let dot: f64 = mode
            .iter()
            .zip(&d)
            .map(|(m, x)| m * x / d_norm_sq.sqrt())
            .sum();
        assert_abs_diff_eq!(dot.abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn planted_mode_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Pre-rotate the base into the model's canonical frame (first
        // landmark on the +x axis) so the recovered mode is directly
        // comparable to the planted one.
        let base = random_shape(&mut rng, 10).normalized().unwrap();
        let anchor = base[0];
        let base = SimilarityTransform::new(1.0, -anchor.y.atan2(anchor.x), Point::ZERO)
            .unwrap()
            .apply(&base);
        let p = orthogonal_mode(&mut rng, &base);
        // Small weights keep the alignment contraction far below the
        // planted variance.
        let eps = 1e-5;
        let weights = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let corpus: Vec<Shape> = weights
            .iter()
            .map(|&w| add_flat(&base, &p, w * eps))
            .collect();
        let build = build_model(&corpus, 0.98).unwrap();
        assert_eq!(build.model.mode_count(), 1);

        let mode = build.model.mode(0);
        let dot: f64 = mode.iter().zip(&p).map(|(a, b)| a * b).sum();
        for (m, q) in mode.iter().zip(&p) {
            assert_abs_diff_eq!(m * dot.signum(), *q, epsilon = 1e-8);
        }

        // Sample variance of the weights (divisor K-1).
        let scaled: Vec<f64> = weights.iter().map(|w| w * eps).collect();
        let mean_w: f64 = scaled.iter().sum::<f64>() / scaled.len() as f64;
        let var_w: f64 = scaled.iter().map(|w| (w - mean_w).powi(2)).sum::<f64>()
            / (scaled.len() - 1) as f64;
        assert_abs_diff_eq!(
            build.model.eigenvalues()[0],
            var_w,
            epsilon = 1e-6 * var_w
        );
    }

    #[test]
    fn corpus_too_small_is_rejected() {
        let s = Shape::from_pairs(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert!(matches!(
            build_model(&[s], 0.98),
            Err(Error::CorpusTooSmall { .. })
        ));
    }

    #[test]
    fn variance_fraction_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corpus = vec![random_shape(&mut rng, 5), random_shape(&mut rng, 5)];
        assert!(build_model(&corpus, 0.0).is_err());
        assert!(build_model(&corpus, 1.5).is_err());
        assert!(build_model(&corpus, 1.0).is_ok());
    }

    #[test]
    fn modes_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corpus: Vec<Shape> = (0..12).map(|_| random_shape(&mut rng, 7)).collect();
        let build = build_model(&corpus, 1.0).unwrap();
        let t = build.model.mode_count();
        assert!(t >= 1);
        assert!(t <= corpus.len() - 1);
        for i in 0..t {
            for j in 0..t {
                let dot: f64 = build
                    .model
                    .mode(i)
                    .iter()
                    .zip(build.model.mode(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expected, epsilon = 1e-9);
            }
        }
        // Eigenvalues non-increasing and positive.
        for w in build.model.eigenvalues().windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(build.model.eigenvalues().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn build_is_bit_deterministic_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = random_shape(&mut rng, 8);
        let corpus: Vec<Shape> = (0..10)
            .map(|_| {
                let t = random_transform(&mut rng);
                let noisy = add_flat(&base, &orthogonal_mode(&mut rng, &base), 0.05);
                t.apply(&noisy)
            })
            .collect();

        let b1 = build_model(&corpus, 0.98).unwrap();
        let b2 = build_model(&corpus, 0.98).unwrap();
        assert_eq!(b1.model.mean_flat(), b2.model.mean_flat());
        assert_eq!(b1.model.modes_row_major(), b2.model.modes_row_major());
        assert_eq!(b1.model.eigenvalues(), b2.model.eigenvalues());

        let mut shuffled = corpus.clone();
        shuffled.rotate_left(3);
        shuffled.reverse();
        let b3 = build_model(&shuffled, 0.98).unwrap();
        let max_diff: f64 = b1
            .model
            .mean_flat()
            .iter()
            .zip(b3.model.mean_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-6, "row order changed the mean by {max_diff}");
        for (l1, l3) in b1.model.eigenvalues().iter().zip(b3.model.eigenvalues()) {
            assert_abs_diff_eq!(l1, l3, epsilon = 1e-9 * (1.0 + l1.abs()));
        }
    }

    #[test]
    fn reconstruct_zero_gives_mean_and_unit_gives_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let corpus: Vec<Shape> = (0..8).map(|_| random_shape(&mut rng, 6)).collect();
        let model = build_model(&corpus, 0.98).unwrap().model;
        let t = model.mode_count();
        assert!(t >= 1);

        let mean = reconstruct(&model, &vec![0.0; t]).unwrap();
        assert!(mean.max_coord_distance(&model.mean_shape()).unwrap() < 1e-15);

        let mut e0 = vec![0.0; t];
        e0[0] = 1.0;
        let s = reconstruct(&model, &e0).unwrap();
        let expected: Vec<f64> = model
            .mean_flat()
            .iter()
            .zip(model.mode(0))
            .map(|(m, p)| m + p)
            .collect();
        let expected = Shape::from_flat(&expected).unwrap();
        assert!(s.max_coord_distance(&expected).unwrap() < 1e-12);

        assert!(matches!(
            reconstruct(&model, &vec![0.0; t + 1]),
            Err(Error::Arity { .. })
        ));
    }

    #[test]
    fn project_round_trip_and_orthogonal_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let corpus: Vec<Shape> = (0..10).map(|_| random_shape(&mut rng, 8)).collect();
        let model = build_model(&corpus, 0.95).unwrap().model;
        let t = model.mode_count();

        assert!(project(&model, &model.mean_shape())
            .unwrap()
            .iter()
            .all(|&v| v.abs() < 1e-12));

        let b0: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let s = reconstruct(&model, &b0).unwrap();
        let recovered = project(&model, &s).unwrap();
        for (a, b) in recovered.iter().zip(&b0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }

        // A deviation orthogonal to every mode projects to zero, and the
        // projection residual is orthogonal to the mode subspace.
        let mut v: Vec<f64> = (0..2 * model.n_points())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        for j in 0..t {
            let col = model.mode(j);
            let dot: f64 = v.iter().zip(&col).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(&col) {
                *vi -= dot * ci;
            }
        }
        let off = add_flat(&model.mean_shape(), &v, 1.0);
        let b = project(&model, &off).unwrap();
        assert!(b.iter().all(|&x| x.abs() < 1e-9));

        let approx_shape = reconstruct(&model, &b).unwrap();
        let residual_vec: Vec<f64> = off
            .flatten()
            .iter()
            .zip(approx_shape.flatten())
            .map(|(a, b)| a - b)
            .collect();
        for j in 0..t {
            let dot: f64 = residual_vec
                .iter()
                .zip(model.mode(j))
                .map(|(a, b)| a * b)
                .sum();
            assert!(dot.abs() < 1e-9);
        }
    }

    fn family_model(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ShapeModel {
        let base = random_shape(rng, n).normalized().unwrap();
        let m1 = orthogonal_mode(rng, &base);
        let m2 = orthogonal_mode(rng, &base);
        let corpus: Vec<Shape> = (0..k)
            .map(|_| {
                let s = add_flat(&base, &m1, rng.gen_range(-0.2..0.2));
                add_flat(&s, &m2, rng.gen_range(-0.1..0.1))
            })
            .collect();
        build_model(&corpus, 0.99).unwrap().model
    }

    #[test]
    fn fit_recovers_generated_pose_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = family_model(&mut rng, 12, 40);
        let t = model.mode_count();
        let opts = FitOptions {
            tol: 1e-16,
            max_iter: 300,
            clamp_sigmas: 3.0,
        };
        for _ in 0..20 {
            let b0: Vec<f64> = model
                .eigenvalues()
                .iter()
                .map(|&l| rng.gen_range(-2.0..2.0) * l.sqrt())
                .collect();
            let truth = random_transform(&mut rng);
            let observed = truth.apply(&reconstruct(&model, &b0).unwrap());
            let result = fit(&model, &observed, &opts).unwrap();
            assert!(result.residual <= 1e-10);
            assert_eq!(result.b.len(), t);
            for (a, b) in result.b.iter().zip(&b0) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
            assert_abs_diff_eq!(result.pose.scale, truth.scale, epsilon = 1e-6);
            assert_abs_diff_eq!(result.pose.rotation, truth.rotation, epsilon = 1e-6);
            assert_abs_diff_eq!(
                result.pose.translation.x,
                truth.translation.x,
                epsilon = 1e-6
            );
            assert_abs_diff_eq!(
                result.pose.translation.y,
                truth.translation.y,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn fit_of_posed_mean_gives_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = family_model(&mut rng, 10, 30);
        let truth = random_transform(&mut rng);
        let observed = truth.apply(&model.mean_shape());
        let result = fit(&model, &observed, &FitOptions::default()).unwrap();
        assert!(result.b.iter().all(|&v| v.abs() < 1e-8));
        assert_abs_diff_eq!(result.pose.scale, truth.scale, epsilon = 1e-8);
        assert_abs_diff_eq!(result.pose.rotation, truth.rotation, epsilon = 1e-8);
    }

    #[test]
    fn fit_clamps_weights_for_off_manifold_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = family_model(&mut rng, 10, 30);
        let mut b0: Vec<f64> = model.eigenvalues().iter().map(|&l| 8.0 * l.sqrt()).collect();
        b0[0] *= -1.0;
        let observed = reconstruct(&model, &b0).unwrap();
        let result = fit(&model, &observed, &FitOptions::default()).unwrap();
        assert!(result.residual > 0.0);
        for (w, &l) in result.b.iter().zip(model.eigenvalues()) {
            assert!(w.abs() <= 3.0 * l.sqrt() + 1e-12);
        }
        assert!(result.clamp_trace.iter().any(|&c| c));
    }

    #[test]
    fn fit_objective_monotone_when_unclamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = family_model(&mut rng, 12, 40);
        for _ in 0..10 {
            let mut observed = random_transform(&mut rng).apply(&model.mean_shape());
            observed = Shape::new(
                observed
                    .iter()
                    .map(|p| {
                        Point::new(
                            p.x + rng.gen_range(-0.5..0.5),
                            p.y + rng.gen_range(-0.5..0.5),
                        )
                    })
                    .collect(),
            )
            .unwrap();
            let result = fit(&model, &observed, &FitOptions::default()).unwrap();
            for (w, clamps) in result
                .objective_trace
                .windows(2)
                .zip(result.clamp_trace.windows(2))
            {
                if !clamps[1] {
                    assert!(
                        w[1] <= w[0] + 1e-9 * (1.0 + w[0]),
                        "objective increased without clamping: {} -> {}",
                        w[0],
                        w[1]
                    );
                }
            }
        }
    }

    #[test]
    fn fit_weights_are_pose_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = family_model(&mut rng, 12, 40);
        let opts = FitOptions {
            tol: 1e-16,
            max_iter: 300,
            clamp_sigmas: 3.0,
        };
        for _ in 0..10 {
            let mut observed = random_transform(&mut rng).apply(&model.mean_shape());
            observed = Shape::new(
                observed
                    .iter()
                    .map(|p| {
                        Point::new(
                            p.x + rng.gen_range(-0.3..0.3),
                            p.y + rng.gen_range(-0.3..0.3),
                        )
                    })
                    .collect(),
            )
            .unwrap();
            let extra = random_transform(&mut rng);
            let r0 = fit(&model, &observed, &opts).unwrap();
            let r1 = fit(&model, &extra.apply(&observed), &opts).unwrap();
            for (a, b) in r0.b.iter().zip(&r1.b) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn fit_zero_mode_model_returns_posed_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s = random_shape(&mut rng, 8);
        let model = build_model(&vec![s; 4], 0.98).unwrap().model;
        assert_eq!(model.mode_count(), 0);
        let truth = random_transform(&mut rng);
        let observed = truth.apply(&model.mean_shape());
        let result = fit(&model, &observed, &FitOptions::default()).unwrap();
        assert!(result.b.is_empty());
        assert!(result.residual < 1e-15);
        assert!(result
            .fitted_shape
            .max_coord_distance(&observed)
            .unwrap()
            < 1e-7);
    }

    #[test]
    fn fit_rejects_degenerate_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let model = family_model(&mut rng, 8, 20);
        let degenerate =
            Shape::new(vec![Point::new(1.0, 1.0); model.n_points()]).unwrap();
        assert!(matches!(
            fit(&model, &degenerate, &FitOptions::default()),
            Err(Error::DegenerateShape(_))
        ));
    }

    #[test]
    fn model_parts_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let model = family_model(&mut rng, 9, 25);
        let rebuilt = ShapeModel::from_parts(
            model.mean_flat().to_vec(),
            model.modes_row_major(),
            model.eigenvalues().to_vec(),
            model.n_points(),
        )
        .unwrap();
        assert_eq!(model, rebuilt);

        // Broken orthonormality is rejected.
        let mut bad = model.modes_row_major();
        if !bad.is_empty() {
            bad[0] += 0.5;
            assert!(ShapeModel::from_parts(
                model.mean_flat().to_vec(),
                bad,
                model.eigenvalues().to_vec(),
                model.n_points(),
            )
            .is_err());
        }
    }
}
