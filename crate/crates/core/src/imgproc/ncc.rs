use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Best template placement: top-left offset and its zero-mean normalized
/// cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateMatch {
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

impl TemplateMatch {
    /// Image coordinates of the template center at the matched offset.
    pub fn center(&self, template: &Image) -> (isize, isize) {
        (
            (self.row + template.height() / 2) as isize,
            (self.col + template.width() / 2) as isize,
        )
    }
}

/// Exhaustive zero-mean NCC template search.
///
/// Windows with zero intensity variance are skipped. Ties keep the smallest
/// row, then the smallest column.
pub fn match_template_ncc(image: &Image, template: &Image) -> Result<TemplateMatch> {
    let (th, tw) = (template.height(), template.width());
    if th == 0 || tw == 0 || th > image.height() || tw > image.width() {
        return Err(Error::InvalidInput(format!(
            "template {th}x{tw} does not fit inside image {}x{}",
            image.height(),
            image.width()
        )));
    }
    let n = (th * tw) as f64;
    let t = template.data();
    let t_mean = t.iter().sum::<f64>() / n;
    let centered: Vec<f64> = t.iter().map(|&v| v - t_mean).collect();
    let t_norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    let t_constant = t.iter().all(|&v| v == t[0]);

    let mut best: Option<TemplateMatch> = None;
    if !t_constant {
        for row in 0..=image.height() - th {
            for col in 0..=image.width() - tw {
                let Some(score) = window_score(image, row, col, th, tw, &centered, t_norm) else {
                    continue;
                };
                if best.is_none_or(|b| score > b.score) {
                    best = Some(TemplateMatch { row, col, score });
                }
            }
        }
    }
    best.ok_or(Error::NoMatch)
}

fn window_score(
    image: &Image,
    row: usize,
    col: usize,
    th: usize,
    tw: usize,
    centered: &[f64],
    t_norm: f64,
) -> Option<f64> {
    let first = image.get(row, col);
    let mut sum = 0.0;
    let mut constant = true;
    for r in 0..th {
        for &v in &image.row(row + r)[col..col + tw] {
            sum += v;
            constant &= v == first;
        }
    }
    if constant {
        return None;
    }
    let mean = sum / (th * tw) as f64;
    let mut cross = 0.0;
    let mut energy = 0.0;
    for r in 0..th {
        let window = &image.row(row + r)[col..col + tw];
        for (&v, &t) in window.iter().zip(&centered[r * tw..(r + 1) * tw]) {
            let d = v - mean;
            cross += d * t;
            energy += d * d;
        }
    }
    let denom = energy.sqrt() * t_norm;
    if denom == 0.0 {
        return None;
    }
    Some((cross / denom).clamp(-1.0, 1.0))
}
