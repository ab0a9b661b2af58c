use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::types::Side;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSource {
    pub patient_id: String,
    pub side: Side,
}

/// Square region of interest ready for network input.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiPatch {
    pixels: Image,
    pub source: PatchSource,
    /// Whether the intensity normalization stage has run on this patch.
    pub normalized: bool,
}

impl RoiPatch {
    pub fn new(pixels: Image, source: PatchSource, normalized: bool) -> Result<Self> {
        if pixels.height() != pixels.width() {
            return Err(Error::InvalidShape(format!(
                "ROI patch must be square, got {}x{}",
                pixels.height(),
                pixels.width()
            )));
        }
        Ok(RoiPatch {
            pixels,
            source,
            normalized,
        })
    }

    pub fn side_len(&self) -> usize {
        self.pixels.width()
    }

    pub fn pixels(&self) -> &Image {
        &self.pixels
    }

    pub fn into_pixels(self) -> Image {
        self.pixels
    }

    /// Same source and flags, new pixels (which must keep the side length).
    pub fn with_pixels(&self, pixels: Image) -> Result<Self> {
        if pixels.height() != self.side_len() || pixels.width() != self.side_len() {
            return Err(Error::InvalidShape(format!(
                "replacement pixels {}x{} do not match patch side {}",
                pixels.height(),
                pixels.width(),
                self.side_len()
            )));
        }
        Ok(RoiPatch {
            pixels,
            source: self.source.clone(),
            normalized: self.normalized,
        })
    }

    /// True when every pixel is finite and inside `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.pixels
            .data()
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}
