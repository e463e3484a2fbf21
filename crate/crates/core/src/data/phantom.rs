//! Synthetic brain-like slices with exactly annotated lesions.
//!
//! A subject is an ellipsoidal "brain" sliced along one axis: every slice is
//! an ellipse whose axes shrink towards the ends of the stack, with a bright
//! rim, a cortex band, a white-matter core, two ventricles in central
//! slices, low-frequency texture that drifts across slices, a multiplicative
//! polynomial bias field and pixel noise. Lesion slices carry one bright
//! elliptical blob that lies entirely inside the brain mask.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BrainMask, SliceImage};
use crate::rng::{self, derive_seed};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub native_resolution: usize,
    /// Side of the square cropped around the brain before resampling.
    pub crop_extent: usize,
    pub output_resolution: usize,
    pub healthy_subjects: usize,
    pub unlabelled_subjects: usize,
    pub slices_per_subject: usize,
    pub lesion_probability: f64,
    /// Lesion semi-axis range in native pixels.
    pub lesion_radius: (f64, f64),
    /// Additive lesion brightness range, in unit-interval intensity.
    pub lesion_intensity: (f64, f64),
    pub bias_amplitude: f64,
    pub texture_scale: f64,
    /// Amplitude of fine, slice-varying structure (folding-like detail).
    pub detail_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            native_resolution: 64,
            crop_extent: 56,
            output_resolution: 32,
            healthy_subjects: 60,
            unlabelled_subjects: 60,
            slices_per_subject: 30,
            lesion_probability: 0.5,
            lesion_radius: (3.0, 7.0),
            lesion_intensity: (0.3, 0.5),
            bias_amplitude: 0.1,
            texture_scale: 0.08,
            detail_scale: 0.2,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let err = Error::config;
        if self.native_resolution < 16 {
            return Err(err("native_resolution", "must be at least 16"));
        }
        if self.crop_extent == 0 || self.crop_extent > self.native_resolution {
            return Err(err("crop_extent", "must lie in 1..=native_resolution"));
        }
        if self.output_resolution == 0 || self.output_resolution > self.crop_extent {
            return Err(err("output_resolution", "must lie in 1..=crop_extent"));
        }
        if self.slices_per_subject == 0 || self.slices_per_subject > u16::MAX as usize {
            return Err(err("slices_per_subject", "must lie in 1..=65535"));
        }
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return Err(err("lesion_probability", "must lie in [0, 1]"));
        }
        let (r0, r1) = self.lesion_radius;
        if !(r0 > 0.5 && r1 >= r0) {
            return Err(err("lesion_radius", "need 0.5 < min <= max"));
        }
        let (i0, i1) = self.lesion_intensity;
        if !(i0 >= 0.0 && i1 >= i0 && i1 <= 1.0) {
            return Err(err("lesion_intensity", "need 0 <= min <= max <= 1"));
        }
        for (name, v) in [
            ("bias_amplitude", self.bias_amplitude),
            ("texture_scale", self.texture_scale),
            ("detail_scale", self.detail_scale),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v < 1.0) {
                return Err(err(name, "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// A generated slice at native resolution with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: SliceImage,
    pub mask: BrainMask,
    /// Rasterized lesion; all `false` for lesion-free slices.
    pub lesion: Vec<bool>,
}

/// Pixels whose centres fall inside a rotated ellipse.
pub fn rasterize_ellipse(height: usize, width: usize, cy: f64, cx: f64, ry: f64, rx: f64, angle: f64) -> Vec<bool> {
    let (s, c) = angle.sin_cos();
    (0..height * width)
        .map(|i| {
            let dy = (i / width) as f64 + 0.5 - cy;
            let dx = (i % width) as f64 + 0.5 - cx;
            let u = c * dx + s * dy;
            let v = -s * dx + c * dy;
            (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
        })
        .collect()
}

struct Wave {
    ky: f64,
    kx: f64,
    drift: f64,
    phase: f64,
    amplitude: f64,
}

/// Subject-level anatomy, fixed across the slice stack.
struct Subject {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    base: f64,
    waves: Vec<Wave>,
    detail: Vec<Wave>,
    bias: [f64; 4],
}

impl Subject {
    fn draw(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = cfg.native_resolution as f64;
        let waves = (0..4)
            .map(|_| {
                let freq = rng.random_range(1.5..4.0);
                let dir = rng.random_range(0.0..PI);
                Wave {
                    ky: 2.0 * PI * freq * dir.sin() / n,
                    kx: 2.0 * PI * freq * dir.cos() / n,
                    drift: rng.random_range(-1.0..1.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                    amplitude: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        let detail = (0..6)
            .map(|_| {
                let freq = rng.random_range(6.0..12.0);
                let dir = rng.random_range(0.0..PI);
                Wave {
                    ky: 2.0 * PI * freq * dir.sin() / n,
                    kx: 2.0 * PI * freq * dir.cos() / n,
                    drift: rng.random_range(-4.0..4.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                    amplitude: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        Subject {
            cy: n / 2.0 + rng.random_range(-2.0..2.0),
            cx: n / 2.0 + rng.random_range(-2.0..2.0),
            ry: n * rng.random_range(0.36..0.42),
            rx: n * rng.random_range(0.30..0.36),
            angle: rng.random_range(-0.15..0.15),
            base: rng.random_range(0.42..0.5),
            waves,
            detail,
            bias: [(); 4].map(|_| rng.random_range(-1.0..1.0)),
        }
    }
}

/// Renders one slice of the subject seeded by `subject_seed`.
pub fn generate_phantom(cfg: &PhantomConfig, subject_seed: u64, slice_index: usize, with_lesion: bool) -> Result<Phantom> {
    cfg.validate()?;
    let n = cfg.native_resolution;
    let nf = n as f64;
    let subject = Subject::draw(cfg, &mut rng::stream(subject_seed, &[]));
    let mut rng = rng::stream(subject_seed, &[slice_index as u64 + 1]);

    let z = ((slice_index as f64 + 0.5) / cfg.slices_per_subject as f64) * 2.0 - 1.0;
    let shrink = (1.0 - 0.55 * z * z).sqrt();
    let (ry, rx) = (subject.ry * shrink, subject.rx * shrink);
    let (sin, cos) = subject.angle.sin_cos();

    let mask_bits = rasterize_ellipse(n, n, subject.cy, subject.cx, ry, rx, subject.angle);
    let mask = BrainMask::new(n, n, mask_bits)?;

    let ventricle_scale = (1.0 - (z / 0.5).powi(2)).max(0.0).sqrt();
    let mut raw = vec![0.0f64; n * n];
    for (i, value) in raw.iter_mut().enumerate() {
        if !mask.bits[i] {
            continue;
        }
        let py = (i / n) as f64 + 0.5 - subject.cy;
        let px = (i % n) as f64 + 0.5 - subject.cx;
        let u = cos * px + sin * py;
        let v = -sin * px + cos * py;
        let rho = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();

        let mut t = if rho > 1.0 - 1.5 / rx.min(ry) {
            0.85
        } else if rho > 0.72 {
            subject.base + 0.15
        } else {
            subject.base
        };
        if ventricle_scale > 0.0 {
            for side in [-1.0, 1.0] {
                let du = (u - side * 0.13 * rx) / (0.07 * rx * ventricle_scale + 0.5);
                let dv = v / (0.24 * ry * ventricle_scale + 0.5);
                if du * du + dv * dv <= 1.0 {
                    t = 0.72;
                }
            }
        }
        let texture: f64 = subject
            .waves
            .iter()
            .map(|w| w.amplitude * (w.ky * py + w.kx * px + w.drift * 3.0 * z + w.phase).sin())
            .sum::<f64>()
            / 2.0;
        let detail: f64 = subject
            .detail
            .iter()
            .map(|w| w.amplitude * (w.ky * py + w.kx * px + w.drift * 3.0 * z + w.phase).sin())
            .sum::<f64>()
            / 3.0;
        t += cfg.texture_scale * texture + cfg.detail_scale * detail;
        *value = t;
    }

    let mut lesion = vec![false; n * n];
    let mut lesion_px = 0;
    if with_lesion {
        let (r0, r1) = cfg.lesion_radius;
        let mut radius = rng.random_range(r0..=r1);
        let mut placed = false;
        for attempt in 0..100 {
            if attempt > 0 && attempt % 10 == 0 {
                radius = (radius * 0.85).max(0.6);
            }
            let aspect: f64 = rng.random_range(0.75..1.3);
            let (ly, lx) = (radius * aspect.sqrt(), radius / aspect.sqrt());
            let angle = rng.random_range(0.0..PI);
            // centre uniform over the brain ellipse shrunk by the lesion size
            let (su, sv) = ((rx - radius).max(0.0), (ry - radius).max(0.0));
            let r = rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            let (du, dv) = (r * phi.cos() * su, r * phi.sin() * sv);
            let cy = subject.cy + sin * du + cos * dv;
            let cx = subject.cx + cos * du - sin * dv;
            let blob = rasterize_ellipse(n, n, cy, cx, ly, lx, angle);
            let count = blob.iter().filter(|&&b| b).count();
            if count == 0 || blob.iter().zip(&mask.bits).any(|(&b, &m)| b && !m) {
                continue;
            }
            let offset = rng.random_range(cfg.lesion_intensity.0..=cfg.lesion_intensity.1);
            let (s, c) = angle.sin_cos();
            for (i, &b) in blob.iter().enumerate() {
                if b {
                    let dy = (i / n) as f64 + 0.5 - cy;
                    let dx = (i % n) as f64 + 0.5 - cx;
                    let r2 = ((c * dx + s * dy) / lx).powi(2) + ((-s * dx + c * dy) / ly).powi(2);
                    raw[i] += offset * (1.0 - 0.4 * r2);
                }
            }
            lesion = blob;
            lesion_px = count as u32;
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::LesionPlacement(100));
        }
    }

    let [b1, b2, b3, b4] = subject.bias;
    let pixels = raw
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if !mask.bits[i] {
                return -1.0;
            }
            let yy = ((i / n) as f64 + 0.5) / nf * 2.0 - 1.0;
            let xx = ((i % n) as f64 + 0.5) / nf * 2.0 - 1.0;
            let field = 1.0 + cfg.bias_amplitude * (b1 * xx + b2 * yy + b3 * xx * yy + b4 * (xx * xx - 0.5));
            let noise: f64 = rng.sample(StandardNormal);
            let t = (t * field + cfg.noise_std * noise).clamp(0.0, 1.0);
            (2.0 * t - 1.0) as f32
        })
        .collect();

    let mut image = SliceImage::new(n, n, pixels)?;
    image.slice_index = slice_index as u16;
    image.lesion_px = lesion_px;
    Ok(Phantom { image, mask, lesion })
}

/// Seed of subject `subject` in cohort `cohort_tag`.
pub fn subject_seed(cfg: &PhantomConfig, cohort_tag: u64, subject: usize) -> u64 {
    derive_seed(cfg.seed, &[cohort_tag, subject as u64])
}
