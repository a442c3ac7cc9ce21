use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("insufficient correspondences: found {found}, need {needed}")]
    InsufficientCorrespondences { found: usize, needed: usize },
    #[error("no homography consensus with at least {min_inliers} inliers")]
    NoConsensus { min_inliers: usize },
    #[error("homography is not invertible")]
    SingularHomography,
    #[error("reference overlap too small or empty: {0}")]
    OverlapTooSmall(String),
    #[error("degenerate center region: {0}")]
    DegenerateCenter(String),
    #[error("match index ({x}, {y}) lies outside the key domain")]
    IndexOutOfDomain { x: usize, y: usize },
}

impl Error {
    /// True for failures of the geometric alignment stages (as opposed to
    /// I/O or argument errors).
    pub fn is_alignment_failure(&self) -> bool {
        matches!(
            self,
            Error::InsufficientCorrespondences { .. }
                | Error::NoConsensus { .. }
                | Error::SingularHomography
                | Error::OverlapTooSmall(_)
                | Error::DegenerateCenter(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
