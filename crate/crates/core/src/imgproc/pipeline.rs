use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::types::Side;

use super::clahe::{clahe, normalize_intensity, ClaheParams};
use super::geometry::{extract_roi, split_midline};
use super::ncc::{match_template_ncc, TemplateMatch};
use super::patch::{PatchSource, RoiPatch};

/// Settings for the radiograph-to-patch chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub roi_side: usize,
    pub clahe: ClaheParams,
    /// Run CLAHE before min-max scaling. Ignored when `normalize` is off.
    pub equalize: bool,
    /// Intensity normalization (CLAHE when enabled, then min-max). When off
    /// the patch keeps raw radiograph intensities.
    pub normalize: bool,
}

impl PrepConfig {
    pub fn new(roi_side: usize) -> Self {
        PrepConfig {
            roi_side,
            clahe: ClaheParams::default(),
            equalize: true,
            normalize: true,
        }
    }
}

/// Split, locate the joint by template matching, cut the ROI and normalize.
pub fn preprocess(
    image: &Image,
    side: Side,
    patient_id: &str,
    template: &Image,
    config: &PrepConfig,
) -> Result<(RoiPatch, TemplateMatch)> {
    let (left, right) = split_midline(image)?;
    let half = match side {
        Side::Left => left,
        Side::Right => right,
    };
    let found = match_template_ncc(&half, template)?;
    let source = PatchSource {
        patient_id: patient_id.to_string(),
        side,
    };
    let mut patch = extract_roi(&half, found.center(template), config.roi_side, source)?;
    if config.normalize {
        if config.equalize {
            patch = clahe(&patch, &config.clahe)?;
        }
        patch = normalize_intensity(&patch);
    }
    Ok((patch, found))
}
