use crate::error::{Error, Result};
use crate::image::Image;

use super::patch::{PatchSource, RoiPatch};

/// Splits a pelvis image at the vertical midline.
///
/// The left half is columns `[0, W/2)`. The right half is columns
/// `[ceil(W/2), W)` mirrored, so both joints share the left half's
/// orientation. For odd widths the center column belongs to neither half.
pub fn split_midline(image: &Image) -> Result<(Image, Image)> {
    let w = image.width();
    if w < 2 {
        return Err(Error::InvalidInput(format!(
            "cannot split an image of width {w} at the midline"
        )));
    }
    let half = w / 2;
    let left = Image::from_fn(image.height(), half, |r, c| image.get(r, c));
    let right = Image::from_fn(image.height(), half, |r, c| image.get(r, w - 1 - c));
    Ok((left, right))
}

/// `side x side` window centered on `center` (row, col). Pixels outside the
/// image repeat the nearest edge pixel.
///
/// For even sizes the center lands on index `side / 2` of the window.
pub fn extract_roi(
    image: &Image,
    center: (isize, isize),
    side: usize,
    source: PatchSource,
) -> Result<RoiPatch> {
    if side < 8 {
        return Err(Error::InvalidInput(format!(
            "ROI side {side} is below the minimum of 8"
        )));
    }
    if image.height() == 0 || image.width() == 0 {
        return Err(Error::InvalidInput("cannot extract an ROI from an empty image".into()));
    }
    let top = center.0 - (side / 2) as isize;
    let left = center.1 - (side / 2) as isize;
    let pixels = Image::from_fn(side, side, |r, c| {
        image.get_clamped(top + r as isize, left + c as isize)
    });
    RoiPatch::new(pixels, source, false)
}

/// Left-right flip.
pub fn hflip(patch: &RoiPatch) -> RoiPatch {
    patch
        .with_pixels(patch.pixels().mirrored())
        .expect("mirroring keeps the side length")
}

/// Bilinear sample at fractional `(y, x)`, replicating edge pixels.
pub fn sample_bilinear(image: &Image, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (r, c) = (y0 as isize, x0 as isize);
    let top = lerp(image.get_clamped(r, c), image.get_clamped(r, c + 1), fx);
    if fy == 0.0 {
        return top;
    }
    let bottom = lerp(image.get_clamped(r + 1, c), image.get_clamped(r + 1, c + 1), fx);
    lerp(top, bottom, fy)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Rotates by `degrees` (counter-clockwise) about the image center, then
/// shifts by `(dy, dx)` pixels. Resampling is bilinear with edge replication.
pub fn rotate_translate(image: &Image, degrees: f64, dy: f64, dx: f64) -> Image {
    let (h, w) = (image.height(), image.width());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    Image::from_fn(h, w, |r, c| {
        // inverse map: output pixel -> source coordinate
        let y = r as f64 - dy - cy;
        let x = c as f64 - dx - cx;
        let sy = cos * y + sin * x + cy;
        let sx = -sin * y + cos * x + cx;
        sample_bilinear(image, sy, sx)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Side;

    fn src() -> PatchSource {
        PatchSource {
            patient_id: "p".into(),
            side: Side::Left,
        }
    }

    #[test]
    fn zero_motion_is_identity() {
        let img = Image::from_fn(7, 9, |r, c| (r * 9 + c) as f64 / 63.0);
        assert_eq!(rotate_translate(&img, 0.0, 0.0, 0.0), img);
    }

    #[test]
    fn integer_translation_shifts_pixels() {
        let img = Image::from_fn(6, 6, |r, c| (r * 6 + c) as f64);
        let moved = rotate_translate(&img, 0.0, 1.0, 2.0);
        assert_eq!(moved.get(3, 4), img.get(2, 2));
        assert_eq!(moved.get(0, 0), img.get(0, 0));
    }

    #[test]
    fn quarter_turn_permutes_pixels() {
        let img = Image::from_fn(5, 5, |r, c| (r * 5 + c) as f64);
        let turned = rotate_translate(&img, 90.0, 0.0, 0.0);
        for r in 0..5 {
            for c in 0..5 {
                assert!((turned.get(r, c) - img.get(c, 4 - r)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn roi_side_below_eight_is_rejected() {
        let img = Image::filled(10, 10, 0.5);
        assert!(extract_roi(&img, (5, 5), 7, src()).is_err());
    }
}
