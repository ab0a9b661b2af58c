use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

use super::geometry::rotate_translate;
use super::patch::RoiPatch;

/// Random flip/rotation/translation/brightness policy for training copies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub hflip_prob: f64,
    pub max_rotation_deg: f64,
    pub max_translate_px: f64,
    /// Half-width of the uniform additive brightness offset.
    pub intensity_jitter: f64,
    pub copies_per_image: usize,
}

impl AugmentPolicy {
    /// Defaults for side length `side`: flip 0.5, rotation up to 10 degrees,
    /// shifts up to side/16, jitter 0.05, two copies.
    pub fn for_side(side: usize) -> Self {
        AugmentPolicy {
            hflip_prob: 0.5,
            max_rotation_deg: 10.0,
            max_translate_px: side as f64 / 16.0,
            intensity_jitter: 0.05,
            copies_per_image: 2,
        }
    }

    /// No-op policy producing `copies` unchanged copies.
    pub fn identity(copies: usize) -> Self {
        AugmentPolicy {
            hflip_prob: 0.0,
            max_rotation_deg: 0.0,
            max_translate_px: 0.0,
            intensity_jitter: 0.0,
            copies_per_image: copies,
        }
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        let check = |ok: bool, what: &str, v: f64, range: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "augmentation {what} = {v} outside {range}"
                )))
            }
        };
        check(
            (0.0..=1.0).contains(&self.hflip_prob),
            "hflip_prob",
            self.hflip_prob,
            "[0, 1]",
        )?;
        check(
            (0.0..=15.0).contains(&self.max_rotation_deg),
            "max_rotation_deg",
            self.max_rotation_deg,
            "[0, 15]",
        )?;
        let max_shift = side as f64 / 8.0;
        check(
            (0.0..=max_shift).contains(&self.max_translate_px),
            "max_translate_px",
            self.max_translate_px,
            &format!("[0, {max_shift}]"),
        )?;
        check(
            (0.0..=0.1).contains(&self.intensity_jitter),
            "intensity_jitter",
            self.intensity_jitter,
            "[0, 0.1]",
        )
    }
}

/// Draws `copies_per_image` augmented copies of `patch`.
///
/// One value is taken from `rng`; copy `i` then uses its own stream derived
/// from that value and `i`, so each copy depends only on (stream, index).
pub fn augment<R: Rng + ?Sized>(
    patch: &RoiPatch,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<Vec<RoiPatch>> {
    policy.validate(patch.side_len())?;
    let base: u64 = rng.random();
    (0..policy.copies_per_image)
        .map(|i| augment_copy(patch, policy, &mut rng::stream(base, &[i as u64])))
        .collect()
}

fn augment_copy<R: Rng>(patch: &RoiPatch, policy: &AugmentPolicy, rng: &mut R) -> Result<RoiPatch> {
    let flip = policy.hflip_prob > 0.0 && rng.random_bool(policy.hflip_prob);
    let angle = symmetric(rng, policy.max_rotation_deg);
    let dy = symmetric(rng, policy.max_translate_px);
    let dx = symmetric(rng, policy.max_translate_px);
    let offset = symmetric(rng, policy.intensity_jitter);

    let mut img: Image = if flip {
        patch.pixels().mirrored()
    } else {
        patch.pixels().clone()
    };
    if angle != 0.0 || dy != 0.0 || dx != 0.0 {
        img = rotate_translate(&img, angle, dy, dx);
    }
    if offset != 0.0 {
        for v in img.data_mut() {
            *v = (*v + offset).clamp(0.0, 1.0);
        }
    }
    patch.with_pixels(img)
}

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}
