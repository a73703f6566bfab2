//! maskfit-core: statistical shape models of face landmarks and
//! mask-template overlay.
//!
//! The crate covers the full pipeline behind the `maskfit` CLI:
//!
//! 1. **Alignment** ([`procrustes`]): closed-form pairwise similarity
//!    solves and generalized Procrustes alignment of a landmark corpus.
//! 2. **Shape modeling** ([`model`]): PCA point-distribution models built
//!    from aligned corpora, and constrained pose+shape fitting of the
//!    model to new observations.
//! 3. **Overlay** ([`overlay`]): mask-template registries, view selection
//!    from a yaw proxy, piecewise-affine warping over a fixed
//!    triangulation, and straight-alpha compositing.
//! 4. **Metrics** ([`metrics`]): Dice/BCE segmentation losses, SSIM,
//!    reconstruction loss, and chin-line deviation for ablation studies.
//! 5. **I/O and synthesis** ([`formats`], [`synth`]): versioned JSON file
//!    formats with bit-exact round-trips, and a seeded synthetic face
//!    generator used by tests and the evaluation harness.

pub mod error;
pub mod formats;
pub mod metrics;
pub mod model;
pub mod overlay;
pub mod procrustes;
pub mod shape;
pub mod synth;

pub use error::{Error, Result};
pub use model::{build_model, fit, project, reconstruct, FitOptions, FitResult, ShapeModel};
pub use overlay::{
    composite, overlay_pipeline, regularize_landmarks, select_landmarks_17, select_template,
    ClassLabel, FaceAnnotation, MaskMethod, MaskTemplate, OverlayJob, OverlayResult,
    PipelineOptions, View,
};
pub use procrustes::{generalized_procrustes, solve_similarity, GpaOptions, GpaResult};
pub use shape::{Point, Shape, SimilarityTransform};
