//! Grayscale intensity grids and 16-bit binary PGM I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grid of intensities, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    /// Pixel lookup with coordinates clamped to the border (edge replication).
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c)
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    /// Copy of the window with top-left corner `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidInput(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |r, c| self.get(row + r, col + c)))
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Image {
        Image::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Encodes as binary PGM (P5), maxval 65535, big-endian samples.
    /// Intensities are clamped to `[0, 1]` and rounded to the nearest level.
    pub fn to_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n65535\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + 2 * self.data.len());
        out.extend_from_slice(header.as_bytes());
        for &v in &self.data {
            let level = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&level.to_be_bytes());
        }
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Image> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or(""));
        }
        if fields[0] != "P5" {
            return Err(Error::Format(format!("expected P5 magic, got {:?}", fields[0])));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM {what}: {s:?}")))
        };
        let width = parse(fields[1], "width")?;
        let height = parse(fields[2], "height")?;
        let maxval = parse(fields[3], "maxval")?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the samples
        pos += 1;
        let bytes_per = if maxval > 255 { 2 } else { 1 };
        let need = width * height * bytes_per;
        let body = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::Format("truncated PGM pixel data".into()))?;
        let scale = maxval as f64;
        let data = if bytes_per == 2 {
            body.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / scale)
                .collect()
        } else {
            body.iter().map(|&b| b as f64 / scale).collect()
        };
        Image::new(height, width, data)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load_pgm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_pgm(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_sample_order() {
        let img = Image::new(1, 2, vec![0.0, 1.0]).unwrap();
        let bytes = img.to_pgm();
        assert_eq!(&bytes[..13], b"P5\n2 1\n65535\n");
        assert_eq!(&bytes[13..], &[0x00, 0x00, 0xff, 0xff]);
    }

    #[test]
    fn pgm_round_trip_is_quantized_to_16_bits() {
        let img = Image::from_fn(5, 7, |r, c| ((r * 7 + c) as f64 / 34.0).powf(1.3));
        let back = Image::from_pgm(&img.to_pgm()).unwrap();
        assert_eq!((back.height(), back.width()), (5, 7));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
        assert_eq!(back.to_pgm(), img.to_pgm());
    }

    #[test]
    fn pgm_rejects_other_magic() {
        assert!(matches!(Image::from_pgm(b"P2\n1 1\n255\n0"), Err(Error::Format(_))));
        assert!(matches!(Image::from_pgm(b"P5\n2 2\n255\n\x00"), Err(Error::Format(_))));
    }

    #[test]
    fn clamped_lookup_replicates_edges() {
        let img = Image::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(img.get_clamped(-4, -1), 0.0);
        assert_eq!(img.get_clamped(5, 9), 5.0);
        assert_eq!(img.get_clamped(1, -2), 3.0);
    }
}
