//! Synthetic pelvis radiographs with a controllable inflammation signature.
//!
//! Each half of the image holds one joint: a dark vertical cleft between a
//! brighter lateral bone band and a dimmer medial one. An inflamed joint gets
//! an elliptical lift of `inflammation_delta` on its lateral band. The right
//! joint is drawn mirrored, so splitting at the midline and mirroring the
//! right half puts both joints in the same orientation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Manifest, ManifestRow};
use crate::image::Image;
use crate::rng::{self, tag};
use crate::types::{Label, Sex, Side};

/// Log-odds change across the full age range per unit of `aux_coupling`.
pub const AGE_TILT: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub image_height: usize,
    pub image_width: usize,
    pub n_patients: usize,
    pub prevalence: f64,
    /// Intensity lift on the lateral band of an inflamed joint, in `[0, 0.2]`.
    pub inflammation_delta: f64,
    /// Per-pixel Gaussian noise, as a fraction of the unit intensity range.
    pub noise_sigma: f64,
    /// Strength of the age dependence of the label odds, in `[0, 1]`.
    pub aux_coupling: f64,
    pub seed: u64,
    /// Standard deviation of the label-independent brightness of the lateral
    /// band. Bounds how separable the classes can be.
    pub band_sigma: f64,
    /// Half-width of the per-image exposure gain range `1 ± exposure_jitter`.
    /// The offset range is half as wide.
    pub exposure_jitter: f64,
    /// Standard deviation of a label-independent density change on the same
    /// periarticular region the inflammation lift uses. Healthy joints with a
    /// positive draw look like mildly inflamed ones, so the classes overlap.
    pub density_sigma: f64,
    /// Largest end-to-end brightness change of the per-image linear
    /// illumination ramp.
    pub shading: f64,
    /// Inclusive uniform age range in years.
    pub age_min: u32,
    pub age_max: u32,
}

impl PhantomSpec {
    pub fn new(n_patients: usize, seed: u64) -> Self {
        PhantomSpec {
            image_height: 80,
            image_width: 160,
            n_patients,
            prevalence: 0.5,
            inflammation_delta: 0.05,
            noise_sigma: 0.05,
            aux_coupling: 0.0,
            seed,
            band_sigma: 0.025,
            exposure_jitter: 0.2,
            density_sigma: 0.02,
            shading: 0.1,
            age_min: 18,
            age_max: 75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.image_height < 32 || self.image_width < 32 {
            return bad(format!(
                "phantom images must be at least 32x32, got {}x{}",
                self.image_height, self.image_width
            ));
        }
        if self.n_patients == 0 {
            return bad("phantom needs at least one patient".into());
        }
        let ranges = [
            ("prevalence", self.prevalence, 0.0, 1.0),
            ("inflammation_delta", self.inflammation_delta, 0.0, 0.2),
            ("noise_sigma", self.noise_sigma, 0.0, 1.0),
            ("aux_coupling", self.aux_coupling, 0.0, 1.0),
            ("band_sigma", self.band_sigma, 0.0, 0.2),
            ("exposure_jitter", self.exposure_jitter, 0.0, 0.5),
            ("density_sigma", self.density_sigma, 0.0, 0.2),
            ("shading", self.shading, 0.0, 0.5),
        ];
        for (name, v, lo, hi) in ranges {
            if !(lo..=hi).contains(&v) {
                return bad(format!("{name} = {v} outside [{lo}, {hi}]"));
            }
        }
        if !(5..=90).contains(&self.age_min) || !(self.age_min..=90).contains(&self.age_max) {
            return bad(format!(
                "age range {}-{} must lie within 5-90",
                self.age_min, self.age_max
            ));
        }
        Ok(())
    }

    pub fn half_width(&self) -> usize {
        self.image_width / 2
    }

    fn scale(&self) -> f64 {
        self.image_height.min(self.half_width()) as f64
    }

    /// Side length of the stored ROI template.
    pub fn template_side(&self) -> usize {
        ((0.4 * self.scale()) as usize / 2 * 2).max(8)
    }

    pub fn patient_id(index: usize) -> String {
        format!("p{:04}", index + 1)
    }

    /// Intercept of the label log-odds such that the mean probability over
    /// the age range equals `prevalence`.
    fn logit_intercept(&self) -> f64 {
        let slope = self.aux_coupling * AGE_TILT;
        let ages: Vec<f64> = (self.age_min..=self.age_max).map(|a| self.age_z(a)).collect();
        let mean_p = |b: f64| {
            ages.iter().map(|&z| sigmoid(b + slope * z)).sum::<f64>() / ages.len() as f64
        };
        let (mut lo, mut hi) = (-60.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_p(mid) < self.prevalence {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Age rescaled to `[-1/2, 1/2]` over the configured range.
    fn age_z(&self, age: u32) -> f64 {
        if self.age_max == self.age_min {
            return 0.0;
        }
        (age as f64 - self.age_min as f64) / (self.age_max - self.age_min) as f64 - 0.5
    }

    /// Probability that a joint of a patient of this age is inflamed.
    pub fn inflammation_probability(&self, age: u32) -> f64 {
        if self.prevalence <= 0.0 {
            return 0.0;
        }
        if self.prevalence >= 1.0 {
            return 1.0;
        }
        let b = self.logit_intercept();
        sigmoid(b + self.aux_coupling * AGE_TILT * self.age_z(age))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One synthetic joint record.
#[derive(Clone, Debug, PartialEq)]
pub struct Radiograph {
    /// Full pelvis image; the joint of interest is in the half named by `side`.
    pub pixels: Image,
    pub patient_id: String,
    pub side: Side,
    pub age_years: u32,
    pub sex: Sex,
    pub label: Label,
}

/// Per-joint anatomy and acquisition draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointDraw {
    /// Joint center in canonical half coordinates.
    pub center: (f64, f64),
    pub tilt_deg: f64,
    pub gain: f64,
    pub offset: f64,
    pub band_shift: f64,
    pub label: Label,
    /// Label-independent lift on the periarticular region.
    pub density: f64,
    /// Illumination ramp as (rows, cols) brightness change across the half.
    pub ramp: (f64, f64),
}

/// Everything random about one patient, before rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientDraw {
    pub index: usize,
    pub age_years: u32,
    pub sex: Sex,
    /// Indexed by [`Side::index`].
    pub joints: [JointDraw; 2],
}

const NOISE: u64 = 0x4e4f_4953;

/// Draws age, sex, labels and anatomy for patient `index`.
pub fn draw_patient(spec: &PhantomSpec, index: usize) -> Result<PatientDraw> {
    spec.validate()?;
    if index >= spec.n_patients {
        return Err(Error::InvalidInput(format!(
            "patient index {index} out of range for {} patients",
            spec.n_patients
        )));
    }
    let mut prng = rng::stream(spec.seed, &[tag::PHANTOM, index as u64]);
    let age_years = prng.random_range(spec.age_min..=spec.age_max);
    let sex = if prng.random_bool(0.5) {
        Sex::Female
    } else {
        Sex::Male
    };
    let p = spec.inflammation_probability(age_years);
    let s = spec.scale();
    let joint = |side: Side| {
        let mut r = rng::stream(spec.seed, &[tag::PHANTOM, index as u64, side.index()]);
        let jitter = 0.08 * s;
        let center = (
            spec.image_height as f64 / 2.0 + r.random_range(-jitter..=jitter),
            spec.half_width() as f64 / 2.0 + r.random_range(-jitter..=jitter),
        );
        let tilt_deg = r.random_range(-8.0..=8.0);
        let ej = spec.exposure_jitter;
        let gain = 1.0 + r.random_range(-ej..=ej);
        let offset = r.random_range(-ej / 4.0..=ej / 4.0);
        let band_shift = if spec.band_sigma > 0.0 {
            Normal::new(0.0, spec.band_sigma)
                .expect("validated sigma")
                .sample(&mut r)
        } else {
            0.0
        };
        let inflamed = r.random::<f64>() < p;
        let density = if spec.density_sigma > 0.0 {
            Normal::new(0.0, spec.density_sigma)
                .expect("validated sigma")
                .sample(&mut r)
        } else {
            0.0
        };
        let angle = r.random_range(0.0..std::f64::consts::TAU);
        let ramp = (spec.shading * angle.sin(), spec.shading * angle.cos());
        JointDraw {
            center,
            tilt_deg,
            gain,
            offset,
            band_shift,
            label: if inflamed {
                Label::ActiveInflammation
            } else {
                Label::Healthy
            },
            density,
            ramp,
        }
    };
    Ok(PatientDraw {
        index,
        age_years,
        sex,
        joints: [joint(Side::Left), joint(Side::Right)],
    })
}

/// Geometry of one joint in canonical half coordinates.
struct JointFrame {
    cy: f64,
    cx: f64,
    sin: f64,
    cos: f64,
    cleft: f64,
    band: f64,
    half_len: f64,
    taper: f64,
}

impl JointFrame {
    fn new(spec: &PhantomSpec, j: &JointDraw) -> Self {
        let s = spec.scale();
        let (sin, cos) = j.tilt_deg.to_radians().sin_cos();
        JointFrame {
            cy: j.center.0,
            cx: j.center.1,
            sin,
            cos,
            cleft: 0.03 * s,
            band: 0.09 * s,
            half_len: 0.32 * s,
            taper: 0.08 * s,
        }
    }

    /// (across, along) coordinates; `across` grows toward the lateral edge.
    fn local(&self, r: usize, c: usize) -> (f64, f64) {
        let dy = r as f64 - self.cy;
        let dx = c as f64 - self.cx;
        (
            -(dx * self.cos + dy * self.sin),
            -dx * self.sin + dy * self.cos,
        )
    }

    fn in_lift(&self, r: usize, c: usize) -> bool {
        let (u, v) = self.local(r, c);
        let uc = self.cleft + self.band / 2.0;
        let a = (u - uc) / (self.band / 2.0);
        let b = v / (0.5 * self.half_len);
        a * a + b * b <= 1.0
    }
}

fn soft_step(x: f64) -> f64 {
    0.5 * (1.0 + (x / 0.8).tanh())
}

fn soft_box(x: f64, lo: f64, hi: f64) -> f64 {
    soft_step(x - lo) * soft_step(hi - x)
}

/// Noise-free, exposure-free joint intensity.
fn anatomy(spec: &PhantomSpec, f: &JointFrame, j: &JointDraw, r: usize, c: usize) -> f64 {
    let hw = spec.half_width() as f64;
    let background = 0.26 + 0.06 * (1.0 - (c as f64 - f.cx).abs() / hw);
    let (u, v) = f.local(r, c);
    let extent = soft_step((f.half_len - v.abs()) / f.taper * 2.0);
    let lateral = (0.30 + j.band_shift) * soft_box(u, f.cleft, f.cleft + f.band);
    let medial = 0.18 * soft_box(u, -f.cleft - f.band, -f.cleft);
    let cleft = -0.12 * soft_box(u, -f.cleft, f.cleft);
    background + extent * (lateral + medial + cleft)
}

/// Renders one canonical half image. `noise` is `None` for a noise-free render.
fn render_half<R: Rng>(spec: &PhantomSpec, j: &JointDraw, noise: Option<&mut R>) -> Image {
    let f = JointFrame::new(spec, j);
    let delta = if j.label.is_positive() {
        spec.inflammation_delta
    } else {
        0.0
    };
    let (h, w) = (spec.image_height as f64, spec.half_width() as f64);
    let lift = delta + j.density;
    let mut img = Image::from_fn(spec.image_height, spec.half_width(), |r, c| {
        let ramp = j.ramp.0 * (r as f64 / h - 0.5) + j.ramp.1 * (c as f64 / w - 0.5);
        let mut v = j.offset + ramp + j.gain * anatomy(spec, &f, j, r, c);
        if lift != 0.0 && f.in_lift(r, c) {
            v += lift;
        }
        v
    });
    if let Some(rng) = noise {
        if spec.noise_sigma > 0.0 {
            let n = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
            for v in img.data_mut() {
                *v += n.sample(rng);
            }
        }
    }
    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

/// Places the canonical halves into a full pelvis image (right half mirrored).
fn assemble(spec: &PhantomSpec, left: &Image, right: &Image) -> Image {
    let w = spec.image_width;
    let hw = spec.half_width();
    Image::from_fn(spec.image_height, w, |r, c| {
        if c < hw {
            left.get(r, c)
        } else if c >= w - hw {
            right.get(r, w - 1 - c)
        } else {
            0.5 * (left.get(r, hw - 1) + right.get(r, hw - 1))
        }
    })
}

/// Renders a patient's pelvis image from its draws.
pub fn render_patient(spec: &PhantomSpec, draw: &PatientDraw) -> Image {
    let half = |side: Side| {
        let mut noise = rng::stream(
            spec.seed,
            &[tag::PHANTOM, draw.index as u64, side.index(), NOISE],
        );
        render_half(spec, &draw.joints[side.index() as usize], Some(&mut noise))
    };
    assemble(spec, &half(Side::Left), &half(Side::Right))
}

/// Mask of the pixels (full-image coordinates) that an inflamed `side`
/// joint lifts by `inflammation_delta`.
pub fn lift_mask(spec: &PhantomSpec, draw: &PatientDraw, side: Side) -> Vec<bool> {
    let f = JointFrame::new(spec, &draw.joints[side.index() as usize]);
    let (h, w, hw) = (spec.image_height, spec.image_width, spec.half_width());
    let mut mask = vec![false; h * w];
    for r in 0..h {
        for c in 0..hw {
            if f.in_lift(r, c) {
                let col = match side {
                    Side::Left => c,
                    Side::Right => w - 1 - c,
                };
                mask[r * w + col] = true;
            }
        }
    }
    mask
}

/// Both joint records of patient `index`.
pub fn generate_patient(spec: &PhantomSpec, index: usize) -> Result<(Radiograph, Radiograph)> {
    let draw = draw_patient(spec, index)?;
    let pixels = render_patient(spec, &draw);
    let record = |side: Side| Radiograph {
        pixels: pixels.clone(),
        patient_id: PhantomSpec::patient_id(index),
        side,
        age_years: draw.age_years,
        sex: draw.sex,
        label: draw.joints[side.index() as usize].label,
    };
    Ok((record(Side::Left), record(Side::Right)))
}

/// Noise-free healthy joint at the nominal position, cropped around its
/// center. Used as the ROI matching template.
pub fn template(spec: &PhantomSpec) -> Result<Image> {
    spec.validate()?;
    let nominal = JointDraw {
        center: (
            spec.image_height as f64 / 2.0,
            spec.half_width() as f64 / 2.0,
        ),
        tilt_deg: 0.0,
        gain: 1.0,
        offset: 0.0,
        band_shift: 0.0,
        label: Label::Healthy,
        density: 0.0,
        ramp: (0.0, 0.0),
    };
    let half = render_half::<rng::Stream>(spec, &nominal, None);
    let t = spec.template_side();
    let top = (nominal.center.0 as usize).saturating_sub(t / 2);
    let left = (nominal.center.1 as usize).saturating_sub(t / 2);
    half.crop(top, left, t, t)
}

/// Relative location of a record's image inside a dataset directory.
pub fn image_file(patient_id: &str, side: Side) -> PathBuf {
    PathBuf::from("images").join(format!("{patient_id}_{side}.pgm"))
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TEMPLATE_FILE: &str = "template.pgm";

/// All `2 * n_patients` records, ordered by patient then side, with the
/// manifest describing them.
pub fn generate_dataset(spec: &PhantomSpec) -> Result<(Vec<Radiograph>, Manifest)> {
    spec.validate()?;
    let pairs: Vec<(Radiograph, Radiograph)> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(spec, i))
        .collect::<Result<_>>()?;
    let records: Vec<Radiograph> = pairs.into_iter().flat_map(|(l, r)| [l, r]).collect();
    let rows = records
        .iter()
        .map(|r| ManifestRow {
            image_path: image_file(&r.patient_id, r.side),
            patient_id: r.patient_id.clone(),
            side: r.side,
            age_years: r.age_years,
            sex: r.sex,
            label: r.label,
        })
        .collect();
    let manifest = Manifest::new(rows, PathBuf::new())?;
    Ok((records, manifest))
}

/// Writes images, the manifest and the matching template under `dir`.
pub fn write_dataset(
    dir: &Path,
    spec: &PhantomSpec,
    records: &[Radiograph],
    manifest: &Manifest,
) -> Result<Manifest> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for (rec, row) in records.iter().zip(&manifest.rows) {
        rec.pixels.save_pgm(&dir.join(&row.image_path))?;
    }
    template(spec)?.save_pgm(&dir.join(TEMPLATE_FILE))?;
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(Manifest {
        rows: manifest.rows.clone(),
        root: dir.to_path_buf(),
    })
}
