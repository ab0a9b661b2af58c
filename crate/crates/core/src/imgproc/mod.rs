//! Radiograph preprocessing: midline split, template matching, ROI
//! extraction, contrast-limited adaptive histogram equalization, intensity
//! normalization and augmentation.

mod augment;
mod clahe;
mod geometry;
mod ncc;
mod patch;
mod pipeline;

pub use augment::{augment, AugmentPolicy};
pub use clahe::{
    bin_of, clahe, clip_histogram, equalization_map, histogram, normalize_intensity, ClaheParams,
};
pub use geometry::{extract_roi, hflip, rotate_translate, sample_bilinear, split_midline};
pub use ncc::{match_template_ncc, TemplateMatch};
pub use patch::{PatchSource, RoiPatch};
pub use pipeline::{preprocess, PrepConfig};
