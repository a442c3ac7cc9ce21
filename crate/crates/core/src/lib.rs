//! Learning-free dual-lens reference super-resolution.
//!
//! A telephoto reference is aligned to the center of a wide-angle
//! low-resolution frame (global homography, then dense flow). Patches of the
//! frame's corner region are matched against its own center region, which
//! avoids comparing images taken through different optics, and the aligned
//! high-resolution reference detail is transferred through those matches to
//! the whole frame.

pub mod dataset;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod kfmatch;
pub mod metrics;
pub mod synthetic;
pub mod transfer;

pub use error::{Error, Result};
pub use image::{Image, ResampleMethod};
