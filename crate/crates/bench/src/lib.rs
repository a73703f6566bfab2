//! Shared input builders for the maskfit benchmarks.

use maskfit_core::shape::{Point, Shape, SimilarityTransform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random shape with coordinates in `[-5, 5]`.
pub fn random_shape(rng: &mut ChaCha8Rng, n: usize) -> Shape {
    Shape::new(
        (0..n)
            .map(|_| Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect(),
    )
    .expect("finite coordinates")
}

/// A random similarity pose with moderate scale and translation.
pub fn random_pose(rng: &mut ChaCha8Rng) -> SimilarityTransform {
    SimilarityTransform::new(
        rng.gen_range(0.5..2.0),
        rng.gen_range(-2.0..2.0),
        Point::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)),
    )
    .expect("valid pose")
}

/// A corpus of posed, jittered copies of one base shape.
pub fn posed_corpus(seed: u64, k: usize, n: usize) -> Vec<Shape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = random_shape(&mut rng, n);
    (0..k)
        .map(|_| {
            let jittered = Shape::new(
                base.points()
                    .iter()
                    .map(|p| {
                        Point::new(
                            p.x + rng.gen_range(-0.2..0.2),
                            p.y + rng.gen_range(-0.2..0.2),
                        )
                    })
                    .collect(),
            )
            .expect("finite");
            random_pose(&mut rng).apply(&jittered)
        })
        .collect()
}
