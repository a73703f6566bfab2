//! Landmark shapes and 2-D similarity transforms.
//!
//! A [`Shape`] is an ordered list of 2-D landmarks; point order is semantic,
//! i.e. index `k` always names the same anatomical landmark within one
//! corpus. A [`SimilarityTransform`] maps model space to image space by
//! `p -> scale * R(rotation) * p + translation` with `R` the
//! counter-clockwise rotation matrix.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A 2-D point or vector, in pixels (image space) or dimensionless units
/// (model space).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(&self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// 2-D cross product (z component of the 3-D cross).
    pub fn cross(&self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(&self) -> f64 {
        self.dot(*self).sqrt()
    }

    pub fn distance(&self, other: Point) -> f64 {
        (*self - other).norm()
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// An ordered set of 2-D landmarks.
///
/// All coordinates are finite; this is enforced at construction so that
/// downstream math never has to re-check.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    points: Vec<Point>,
}

impl Shape {
    /// Builds a shape, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidShape(format!(
                    "non-finite coordinate at point {i}: ({}, {})",
                    p.x, p.y
                )));
            }
        }
        Ok(Shape { points })
    }

    /// Builds a shape from `(x, y)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Shape::new(pairs.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    /// Builds a shape from a flat `[x1, y1, x2, y2, ...]` slice.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::InvalidShape(format!(
                "flat coordinate list has odd length {}",
                flat.len()
            )));
        }
        Shape::new(flat.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
    }

    /// Flattened coordinates `[x1, y1, x2, y2, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 2);
        for p in &self.points {
            out.push(p.x);
            out.push(p.y);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len().max(1) as f64;
        let mut c = Point::ZERO;
        for p in &self.points {
            c = c + *p;
        }
        c * (1.0 / n)
    }

    /// Root-mean-square distance of the points from their centroid.
    pub fn rms_radius(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let c = self.centroid();
        let ss: f64 = self.points.iter().map(|p| (*p - c).dot(*p - c)).sum();
        (ss / self.points.len() as f64).sqrt()
    }

    /// Centers the shape at the origin and scales it to RMS point radius 1.
    ///
    /// This is the model-space normalization convention used for corpus
    /// means. Fails if all points coincide.
    pub fn normalized(&self) -> Result<Shape> {
        let c = self.centroid();
        let r = self.rms_radius();
        if r <= 0.0 {
            return Err(Error::DegenerateShape(
                "all points coincident; cannot normalize".into(),
            ));
        }
        let inv = 1.0 / r;
        Shape::new(self.points.iter().map(|p| (*p - c) * inv).collect())
    }

    /// Sum of squared coordinate differences to another shape of equal arity.
    pub fn squared_distance(&self, other: &Shape) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::ShapeArity {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(self
            .points
            .iter()
            .zip(other.points.iter())
            .map(|(a, b)| (*a - *b).dot(*a - *b))
            .sum())
    }

    /// Largest absolute coordinate difference to another shape.
    pub fn max_coord_distance(&self, other: &Shape) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::ShapeArity {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(self
            .points
            .iter()
            .zip(other.points.iter())
            .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()))
            .fold(0.0, f64::max))
    }
}

impl std::ops::Index<usize> for Shape {
    type Output = Point;
    fn index(&self, i: usize) -> &Point {
        &self.points[i]
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// A 2-D similarity transform `p -> scale * R(rotation) * p + translation`.
///
/// `rotation` is in radians, counter-clockwise, kept in `(-pi, pi]`;
/// `scale` is strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: Point,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: f64, translation: Point) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "similarity scale must be finite and > 0, got {scale}"
            )));
        }
        if !rotation.is_finite() || !translation.is_finite() {
            return Err(Error::InvalidParameter(
                "similarity rotation/translation must be finite".into(),
            ));
        }
        Ok(SimilarityTransform {
            scale,
            rotation: wrap_angle(rotation),
            translation,
        })
    }

    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: Point::ZERO,
        }
    }

    /// Applies the transform to one point.
    pub fn apply_point(&self, p: Point) -> Point {
        let (sin, cos) = self.rotation.sin_cos();
        Point::new(
            self.scale * (cos * p.x - sin * p.y) + self.translation.x,
            self.scale * (sin * p.x + cos * p.y) + self.translation.y,
        )
    }

    /// Applies the transform to every point of a shape, preserving count
    /// and order.
    pub fn apply(&self, shape: &Shape) -> Shape {
        Shape {
            points: shape.points.iter().map(|&p| self.apply_point(p)).collect(),
        }
    }

    /// The inverse transform, such that `inverse().apply(apply(s))` is the
    /// identity to within floating-point error.
    pub fn inverse(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let (sin, cos) = (-self.rotation).sin_cos();
        let t = self.translation;
        SimilarityTransform {
            scale: inv_scale,
            rotation: wrap_angle(-self.rotation),
            translation: Point::new(
                -inv_scale * (cos * t.x - sin * t.y),
                -inv_scale * (sin * t.x + cos * t.y),
            ),
        }
    }

    /// Composition `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: wrap_angle(self.rotation + other.rotation),
            translation: self.apply_point(other.translation),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn shape(pts: &[(f64, f64)]) -> Shape {
        Shape::from_pairs(pts).unwrap()
    }

    #[test]
    fn identity_transform_is_noop() {
        let s = shape(&[(1.0, 2.0), (-3.5, 0.25), (4.0, -1.0)]);
        let t = SimilarityTransform::identity();
        assert_eq!(t.apply(&s), s);
    }

    #[test]
    fn pure_scaling() {
        let s = shape(&[(1.0, 0.0), (0.0, 1.0), (-1.0, -1.0)]);
        let t = SimilarityTransform::new(2.0, 0.0, Point::ZERO).unwrap();
        let out = t.apply(&s);
        let expected = shape(&[(2.0, 0.0), (0.0, 2.0), (-2.0, -2.0)]);
        assert_abs_diff_eq!(out.max_coord_distance(&expected).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_with_translation() {
        // R(pi/2) * (1, 0) = (0, 1); plus (1, 0) gives (1, 1).
        let s = shape(&[(1.0, 0.0)]);
        let t = SimilarityTransform::new(1.0, FRAC_PI_2, Point::new(1.0, 0.0)).unwrap();
        let out = t.apply(&s);
        assert_abs_diff_eq!(out[0].x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0].y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_coordinates_rejected() {
        let err = Shape::from_pairs(&[(0.0, 0.0), (f64::NAN, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidShape(_)));
        let err = Shape::from_pairs(&[(f64::INFINITY, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidShape(_)));
    }

    #[test]
    fn invalid_scale_rejected() {
        assert!(SimilarityTransform::new(0.0, 0.0, Point::ZERO).is_err());
        assert!(SimilarityTransform::new(-1.0, 0.0, Point::ZERO).is_err());
        assert!(SimilarityTransform::new(f64::NAN, 0.0, Point::ZERO).is_err());
    }

    #[test]
    fn rotation_wraps_into_half_open_interval() {
        let t = SimilarityTransform::new(1.0, 3.0 * PI, Point::ZERO).unwrap();
        assert_abs_diff_eq!(t.rotation, PI, epsilon = 1e-12);
        let t = SimilarityTransform::new(1.0, -PI, Point::ZERO).unwrap();
        assert_abs_diff_eq!(t.rotation, PI, epsilon = 1e-12);
        let t = SimilarityTransform::new(1.0, -0.5, Point::ZERO).unwrap();
        assert_abs_diff_eq!(t.rotation, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn normalize_centers_and_scales() {
        let s = shape(&[(10.0, 4.0), (12.0, 4.0), (11.0, 7.0)]);
        let n = s.normalized().unwrap();
        assert_abs_diff_eq!(n.centroid().norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.rms_radius(), 1.0, epsilon = 1e-12);
        assert!(shape(&[(3.0, 3.0), (3.0, 3.0)]).normalized().is_err());
    }

    proptest! {
        #[test]
        fn inverse_round_trip(
            scale in 0.05f64..20.0,
            rot in -3.1f64..3.1,
            tx in -50.0f64..50.0,
            ty in -50.0f64..50.0,
            pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..20),
        ) {
            let t = SimilarityTransform::new(scale, rot, Point::new(tx, ty)).unwrap();
            let s = Shape::from_pairs(&pts).unwrap();
            let back = t.inverse().apply(&t.apply(&s));
            prop_assert!(back.max_coord_distance(&s).unwrap() < 1e-9);
        }

        #[test]
        fn compose_matches_sequential_application(
            s1 in 0.2f64..5.0, r1 in -3.0f64..3.0, x1 in -10.0f64..10.0, y1 in -10.0f64..10.0,
            s2 in 0.2f64..5.0, r2 in -3.0f64..3.0, x2 in -10.0f64..10.0, y2 in -10.0f64..10.0,
            px in -20.0f64..20.0, py in -20.0f64..20.0,
        ) {
            let a = SimilarityTransform::new(s1, r1, Point::new(x1, y1)).unwrap();
            let b = SimilarityTransform::new(s2, r2, Point::new(x2, y2)).unwrap();
            let p = Point::new(px, py);
            let via_compose = a.compose(&b).apply_point(p);
            let sequential = a.apply_point(b.apply_point(p));
            prop_assert!((via_compose - sequential).norm() < 1e-8);
        }
    }
}
