//! Range normalization, histogram matching, crop/resize and augmentation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BrainMask, SliceImage};
use crate::{Error, Result};

/// Maps the minimum of a subject volume to -1 and its maximum to +1 with a
/// single affine transform shared by all slices.
pub fn normalize_range(volume: &[SliceImage]) -> Result<Vec<SliceImage>> {
    let (lo, hi) = volume
        .iter()
        .flat_map(|s| s.pixels.iter())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if volume.iter().all(SliceImage::is_empty) {
        return Err(Error::EmptyInput("normalize_range"));
    }
    if !(hi > lo) {
        return Err(Error::ConstantVolume);
    }
    if lo == -1.0 && hi == 1.0 {
        return Ok(volume.to_vec());
    }
    let (lo, range) = (lo as f64, hi as f64 - lo as f64);
    Ok(volume
        .iter()
        .map(|s| s.with_pixels(s.pixels.iter().map(|&v| (2.0 * (v as f64 - lo) / range - 1.0) as f32).collect()))
        .collect())
}

/// Number of equal-mass bins of the reference quantile function.
pub const HISTOGRAM_BINS: usize = 256;

/// Reference quantiles at probabilities `j / 256`, `j = 0..=256`, taken
/// over the mask interior of a reference slice.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileTable {
    edges: Vec<f64>,
}

impl QuantileTable {
    pub fn from_reference(reference: &SliceImage, mask: &BrainMask) -> Result<Self> {
        mask.check_matches("histogram_match", reference)?;
        let values: Vec<f32> = interior(reference, mask).collect();
        Self::from_values(values)
    }

    pub fn from_values(mut values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyMask);
        }
        values.sort_by(f32::total_cmp);
        let n = values.len();
        let edges = (0..=HISTOGRAM_BINS)
            .map(|j| {
                let pos = j as f64 / HISTOGRAM_BINS as f64 * (n - 1) as f64;
                let i = pos.floor() as usize;
                let frac = pos - i as f64;
                let a = values[i] as f64;
                let b = values[(i + 1).min(n - 1)] as f64;
                a + frac * (b - a)
            })
            .collect();
        Ok(QuantileTable { edges })
    }

    /// Reference value at cumulative probability `p`, linear within a bin.
    pub fn quantile(&self, p: f64) -> f64 {
        let x = p.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64;
        let j = (x.floor() as usize).min(HISTOGRAM_BINS - 1);
        let frac = x - j as f64;
        self.edges[j] + frac * (self.edges[j + 1] - self.edges[j])
    }

    /// Width of the widest quantile bin.
    pub fn max_bin_width(&self) -> f64 {
        self.edges.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

fn interior<'a>(img: &'a SliceImage, mask: &'a BrainMask) -> impl Iterator<Item = f32> + 'a {
    img.pixels.iter().zip(&mask.bits).filter(|(_, &m)| m).map(|(&v, _)| v)
}

/// Mid-rank empirical CDF positions `(rank - 1/2) / n`, ties averaged.
fn cdf_positions(values: &[f32]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut pos = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            pos[k] = (mid - 0.5) / n as f64;
        }
        i = j + 1;
    }
    pos
}

/// Quantile mapping of the mask-interior pixels of a subject volume onto a
/// reference distribution: each pixel goes to the reference quantile at its
/// own pooled empirical CDF position. Exterior pixels are untouched.
pub fn histogram_match_volume(volume: &[SliceImage], masks: &[BrainMask], table: &QuantileTable) -> Result<Vec<SliceImage>> {
    if volume.len() != masks.len() {
        return Err(Error::shape("histogram_match", volume.len(), masks.len()));
    }
    let mut values = Vec::new();
    for (img, mask) in volume.iter().zip(masks) {
        mask.check_matches("histogram_match", img)?;
        values.extend(interior(img, mask));
    }
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    let pos = cdf_positions(&values);
    let mut next = pos.iter();
    Ok(volume
        .iter()
        .zip(masks)
        .map(|(img, mask)| {
            let pixels = img
                .pixels
                .iter()
                .zip(&mask.bits)
                .map(|(&v, &m)| {
                    if m {
                        table.quantile(*next.next().expect("one position per interior pixel")) as f32
                    } else {
                        v
                    }
                })
                .collect();
            img.with_pixels(pixels)
        })
        .collect())
}

/// Single-slice form of [`histogram_match_volume`].
pub fn histogram_match(img: &SliceImage, mask: &BrainMask, reference: &SliceImage, ref_mask: &BrainMask) -> Result<SliceImage> {
    let table = QuantileTable::from_reference(reference, ref_mask)?;
    Ok(histogram_match_volume(std::slice::from_ref(img), std::slice::from_ref(mask), &table)?.remove(0))
}

/// Crops a `crop_extent` square centred on the mask bounding box (padding
/// with background) and resamples it to `output_extent`: bilinear for the
/// image, nearest neighbour for the mask.
pub fn crop_resize(img: &SliceImage, mask: &BrainMask, crop_extent: usize, output_extent: usize) -> Result<(SliceImage, BrainMask)> {
    mask.check_matches("crop_resize", img)?;
    if output_extent == 0 || output_extent > crop_extent {
        return Err(Error::config("output_extent", format!("must lie in 1..={crop_extent}")));
    }
    let (y0, x0, y1, x1) = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let origin = |lo: usize, hi: usize| ((lo + hi + 1) as isize - crop_extent as isize).div_euclid(2);
    let (oy, ox) = (origin(y0, y1), origin(x0, x1));

    let src = |y: isize, x: isize| -> (f32, bool) {
        let (sy, sx) = (y + oy, x + ox);
        if sy < 0 || sx < 0 || sy >= img.height as isize || sx >= img.width as isize {
            (-1.0, false)
        } else {
            let i = sy as usize * img.width + sx as usize;
            (img.pixels[i], mask.bits[i])
        }
    };

    let scale = crop_extent as f64 / output_extent as f64;
    let n = output_extent;
    let mut pixels = Vec::with_capacity(n * n);
    let mut bits = Vec::with_capacity(n * n);
    let last = crop_extent as f64 - 1.0;
    for y in 0..n {
        let fy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
        let (ya, ty) = (fy.floor() as isize, fy - fy.floor());
        let yb = (ya + 1).min(last as isize);
        for x in 0..n {
            let fx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let (xa, tx) = (fx.floor() as isize, fx - fx.floor());
            let xb = (xa + 1).min(last as isize);
            let v = |yy, xx| src(yy, xx).0 as f64;
            let top = v(ya, xa) * (1.0 - tx) + v(ya, xb) * tx;
            let bottom = v(yb, xa) * (1.0 - tx) + v(yb, xb) * tx;
            pixels.push((top * (1.0 - ty) + bottom * ty).clamp(-1.0, 1.0) as f32);
            let ny = ((y as f64 + 0.5) * scale).floor() as isize;
            let nx = ((x as f64 + 0.5) * scale).floor() as isize;
            bits.push(src(ny, nx).1);
        }
    }
    let out = SliceImage {
        height: n,
        width: n,
        pixels,
        ..img.clone()
    };
    Ok((out, BrainMask::new(n, n, bits)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub flip_probability: f64,
    pub brightness_delta: f32,
    pub brightness_probability: f64,
    pub noise_std: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            flip_probability: 0.5,
            brightness_delta: 0.1,
            brightness_probability: 0.3,
            noise_std: 0.05,
        }
    }
}

/// The random outcomes of one augmentation, drawn up front so they can be
/// forced in tests and shared between the network input and its target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentDraws {
    pub flip: bool,
    /// Signed shift added to interior pixels; 0 when not applied.
    pub brightness: f32,
    /// Per-pixel noise; empty when disabled.
    pub noise: Vec<f32>,
}

impl AugmentDraws {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, pixels: usize, rng: &mut R) -> Self {
        if !cfg.enabled {
            return AugmentDraws::default();
        }
        let flip = rng.random_bool(cfg.flip_probability);
        let brightness = if rng.random_bool(cfg.brightness_probability) {
            if rng.random_bool(0.5) {
                cfg.brightness_delta
            } else {
                -cfg.brightness_delta
            }
        } else {
            0.0
        };
        let noise = if cfg.noise_std > 0.0 {
            (0..pixels)
                .map(|_| cfg.noise_std * rng.sample::<f32, _>(StandardNormal))
                .collect()
        } else {
            Vec::new()
        };
        AugmentDraws { flip, brightness, noise }
    }

    pub fn without_noise(&self) -> Self {
        AugmentDraws {
            noise: Vec::new(),
            ..self.clone()
        }
    }
}

fn flip_rows<T: Copy>(data: &mut [T], width: usize) {
    for row in data.chunks_exact_mut(width) {
        row.reverse();
    }
}

/// Applies forced augmentation draws: horizontal flip (image and mask),
/// interior brightness shift, additive noise, clamping to `[-1, 1]`.
pub fn apply_augment(img: &SliceImage, mask: &BrainMask, draws: &AugmentDraws) -> (SliceImage, BrainMask) {
    let mut pixels = img.pixels.clone();
    let mut bits = mask.bits.clone();
    if draws.flip {
        flip_rows(&mut pixels, img.width);
        flip_rows(&mut bits, img.width);
    }
    if draws.brightness != 0.0 {
        for (v, _) in pixels.iter_mut().zip(&bits).filter(|(_, &m)| m) {
            *v = (*v + draws.brightness).clamp(-1.0, 1.0);
        }
    }
    if !draws.noise.is_empty() {
        for (v, n) in pixels.iter_mut().zip(&draws.noise) {
            *v = (*v + n).clamp(-1.0, 1.0);
        }
    }
    (
        img.with_pixels(pixels),
        BrainMask {
            bits,
            ..mask.clone()
        },
    )
}

/// Training-time augmentation with fresh draws from `rng`.
pub fn augment<R: Rng + ?Sized>(img: &SliceImage, mask: &BrainMask, cfg: &AugmentConfig, rng: &mut R) -> (SliceImage, BrainMask) {
    let draws = AugmentDraws::sample(cfg, img.len(), rng);
    apply_augment(img, mask, &draws)
}
