//! Joint radiograph classification pipeline.
//!
//! Synthetic phantom generation, ROI preprocessing, a small reverse-mode
//! autodiff engine, dense/residual convolutional ensembles with late-fused
//! age/sex features, patient-level cross-validation and diagnostic
//! statistics.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod image;
pub mod imgproc;
pub mod metrics;
pub mod nets;
pub mod phantom;
pub mod rng;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
pub use image::Image;
pub use types::{Label, Sex, Side};
