//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A shape contains non-finite coordinates or is otherwise malformed.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Two shapes that must share a point count do not.
    #[error("shape arity mismatch: expected {expected} points, got {actual}")]
    ShapeArity { expected: usize, actual: usize },

    /// A shape is degenerate for the requested operation (e.g. all points
    /// coincident, so no similarity transform can be recovered).
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    /// Model building needs at least two shapes.
    #[error("corpus too small: need at least {min} shapes, got {got}")]
    CorpusTooSmall { min: usize, got: usize },

    /// A caller-supplied parameter is out of range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector length does not match the model's mode count or point count.
    #[error("arity mismatch: expected length {expected}, got {actual}")]
    Arity { expected: usize, actual: usize },

    /// The template registry is missing a required view.
    #[error("template registry incomplete: no template for view `{0}`")]
    RegistryIncomplete(String),

    /// Every triangle of a warp target is degenerate.
    #[error("degenerate warp: every target triangle has zero area")]
    WarpDegenerate,

    /// A mask raster has no pixels above the alpha threshold.
    #[error("empty mask footprint")]
    EmptyMaskFootprint,

    /// A mask template failed validation.
    #[error("invalid template `{name}`: {reason}")]
    InvalidTemplate { name: String, reason: String },

    /// Dimensions of two rasters that must match do not.
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// JSON syntax error while reading a file, with path context.
    #[error("parse error in {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    /// A file parsed but violates its schema, with entry context.
    #[error("invalid file {path}: {reason}")]
    FileValidation { path: String, reason: String },

    /// The file declares a schema version this build does not understand.
    #[error("unsupported schema version {found} in {path} (expected {expected})")]
    SchemaVersion {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Whether this error stems from bad input files or parameters (as
    /// opposed to a numerical failure at runtime). CLI exit codes key off
    /// this distinction.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidShape(_)
                | Error::ShapeArity { .. }
                | Error::CorpusTooSmall { .. }
                | Error::InvalidParameter(_)
                | Error::Arity { .. }
                | Error::RegistryIncomplete(_)
                | Error::InvalidTemplate { .. }
                | Error::DimensionMismatch(..)
                | Error::Parse { .. }
                | Error::FileValidation { .. }
                | Error::SchemaVersion { .. }
                | Error::Io { .. }
                | Error::Image { .. }
        )
    }
}
