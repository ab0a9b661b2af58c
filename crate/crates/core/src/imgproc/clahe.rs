use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

use super::patch::RoiPatch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    /// Tile grid as (rows, cols).
    pub tiles: (usize, usize),
    /// Histogram clip level relative to a flat histogram; `f64::INFINITY`
    /// disables clipping.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles: (8, 8),
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tiles.0 == 0 || self.tiles.1 == 0 {
            return Err(Error::InvalidInput(format!(
                "CLAHE tile grid must be positive, got {:?}",
                self.tiles
            )));
        }
        if !(self.clip_limit >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "CLAHE clip limit must be >= 1, got {}",
                self.clip_limit
            )));
        }
        if self.bins < 2 {
            return Err(Error::InvalidInput(format!(
                "CLAHE needs at least 2 bins, got {}",
                self.bins
            )));
        }
        Ok(())
    }
}

/// Histogram bin of an intensity, clamping to `[0, 1]` first.
#[inline]
pub fn bin_of(v: f64, bins: usize) -> usize {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    ((v * bins as f64) as usize).min(bins - 1)
}

pub fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &v in values {
        h[bin_of(v, bins)] += 1.0;
    }
    h
}

/// Clips every bin at `clip_limit * total / bins` and hands the excess back
/// uniformly. Bins that would rise above the clip level are held there and
/// their share goes to the remaining bins, so the result never exceeds the
/// clip level and keeps the original total.
pub fn clip_histogram(hist: &[f64], clip_limit: f64) -> Vec<f64> {
    if !clip_limit.is_finite() {
        return hist.to_vec();
    }
    let bins = hist.len();
    let total: f64 = hist.iter().sum();
    let cap = clip_limit * total / bins as f64;
    let clipped: Vec<f64> = hist.iter().map(|&h| h.min(cap)).collect();
    if clipped.iter().sum::<f64>() >= total {
        return clipped;
    }
    // Find the uniform raise r with sum(min(h + r, cap)) = total. Bins
    // saturate from the largest down, so scan the sorted levels.
    let mut sorted = clipped.clone();
    sorted.sort_by(f64::total_cmp);
    let mut below_sum: f64 = sorted.iter().sum();
    let mut raise = 0.0;
    for m in (1..=bins).rev() {
        // the m smallest bins are unsaturated, the rest sit at the cap
        let r = (total - (bins - m) as f64 * cap - below_sum) / m as f64;
        // m = 1 always fits; the tolerance absorbs rounding at the boundary
        if m == 1 || sorted[m - 1] + r <= cap * (1.0 + 1e-12) {
            raise = r;
            break;
        }
        below_sum -= sorted[m - 1];
    }
    clipped.iter().map(|&h| (h + raise).min(cap)).collect()
}

/// Equalization lookup `m(k) = (cdf(k) - cdf_min) / (total - cdf_min)`,
/// where `cdf_min` is the cdf at the first occupied bin. `None` when a single
/// bin holds all the mass.
pub fn equalization_map(hist: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = hist.iter().sum();
    let first = hist.iter().position(|&h| h > 0.0)?;
    let mut cdf = Vec::with_capacity(hist.len());
    let mut acc = 0.0;
    for &h in hist {
        acc += h;
        cdf.push(acc);
    }
    let cdf_min = cdf[first];
    let span = total - cdf_min;
    if span <= 0.0 {
        return None;
    }
    Some(
        cdf.iter()
            .map(|&c| ((c - cdf_min) / span).clamp(0.0, 1.0))
            .collect(),
    )
}

/// Per-tile intensity mapping.
#[derive(Clone, Debug)]
enum TileMap {
    Identity,
    Lookup(Vec<f64>),
}

impl TileMap {
    #[inline]
    fn apply(&self, v: f64, bins: usize) -> f64 {
        match self {
            TileMap::Identity => v.clamp(0.0, 1.0),
            TileMap::Lookup(m) => m[bin_of(v, bins)],
        }
    }
}

/// Contrast-limited adaptive histogram equalization.
///
/// Each tile gets its own clipped-histogram equalization; pixels blend the
/// mappings of the four nearest tile centers bilinearly. When the tile grid
/// does not divide the patch, the patch is padded by edge replication for
/// the histograms. A tile whose pixels all fall in one bin keeps its values.
pub fn clahe(patch: &RoiPatch, params: &ClaheParams) -> Result<RoiPatch> {
    params.validate()?;
    let img = patch.pixels();
    let out = clahe_image(img, params);
    patch.with_pixels(out)
}

pub(crate) fn clahe_image(img: &Image, params: &ClaheParams) -> Image {
    let (h, w) = (img.height(), img.width());
    let (tr, tc) = params.tiles;
    let th = h.div_ceil(tr);
    let tw = w.div_ceil(tc);
    let bins = params.bins;

    let mut maps = Vec::with_capacity(tr * tc);
    let mut values = Vec::with_capacity(th * tw);
    for ty in 0..tr {
        for tx in 0..tc {
            values.clear();
            for r in 0..th {
                for c in 0..tw {
                    values.push(img.get_clamped((ty * th + r) as isize, (tx * tw + c) as isize));
                }
            }
            let hist = histogram(&values, bins);
            let occupied = hist.iter().filter(|&&v| v > 0.0).count();
            let map = if occupied <= 1 {
                TileMap::Identity
            } else {
                match equalization_map(&clip_histogram(&hist, params.clip_limit)) {
                    Some(m) => TileMap::Lookup(m),
                    None => TileMap::Identity,
                }
            };
            maps.push(map);
        }
    }

    let neighbors = |pos: usize, size: usize, count: usize| -> (usize, usize, f64) {
        // tile centers sit at (i + 0.5) * size - 0.5
        let g = (pos as f64 + 0.5) / size as f64 - 0.5;
        if g <= 0.0 {
            return (0, 0, 0.0);
        }
        let i0 = g.floor() as usize;
        if i0 + 1 >= count {
            return (count - 1, count - 1, 0.0);
        }
        (i0, i0 + 1, g - i0 as f64)
    };

    Image::from_fn(h, w, |r, c| {
        let v = img.get(r, c);
        let (y0, y1, fy) = neighbors(r, th, tr);
        let (x0, x1, fx) = neighbors(c, tw, tc);
        let at = |ty: usize, tx: usize| maps[ty * tc + tx].apply(v, bins);
        let row = |ty: usize| {
            let a = at(ty, x0);
            if x1 == x0 || fx == 0.0 {
                a
            } else {
                a + (at(ty, x1) - a) * fx
            }
        };
        let top = row(y0);
        if y1 == y0 || fy == 0.0 {
            top
        } else {
            top + (row(y1) - top) * fy
        }
    })
}

/// Min-max rescale to `[0, 1]`; a constant patch becomes all 0.5.
pub fn normalize_intensity(patch: &RoiPatch) -> RoiPatch {
    let (lo, hi) = patch.pixels().min_max();
    let data: Vec<f64> = if hi > lo {
        let span = hi - lo;
        patch
            .pixels()
            .data()
            .iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.5; patch.pixels().data().len()]
    };
    let side = patch.side_len();
    let mut out = patch
        .with_pixels(Image::new(side, side, data).expect("same size"))
        .expect("same side");
    out.normalized = true;
    out
}
