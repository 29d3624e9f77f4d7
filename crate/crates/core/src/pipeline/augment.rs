//! Joint geometric augmentation of image and mask, plus image-only blur.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sod_tensor::Tensor;

use super::data::Sample;

/// Upper bound of the blur standard deviation, in pixels.
pub const MAX_BLUR_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// rotation by a uniformly drawn multiple of 90°
    pub rotate: bool,
    pub hflip: bool,
    pub vflip: bool,
    /// Gaussian blur of the image with `σ ~ U[0, 1.5]`
    pub blur: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { rotate: true, hflip: true, vflip: true, blur: true }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { rotate: false, hflip: false, vflip: false, blur: false }
    }
}

/// Rotates every plane by `k × 90°` counter-clockwise (as displayed with
/// row 0 at the top): `out[i][j] = in[j][W − 1 − i]` for one quarter turn.
pub fn rot90(t: &Tensor<f32>, k: usize) -> Tensor<f32> {
    let mut cur = t.clone();
    for _ in 0..k % 4 {
        let s = cur.shape();
        cur = Tensor::from_fn([s.n, s.c, s.w, s.h], |[n, c, i, j]| cur.at(n, c, j, s.w - 1 - i));
    }
    cur
}

/// Mirrors columns.
pub fn hflip(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    Tensor::from_fn(s, |[n, c, y, x]| t.at(n, c, y, s.w - 1 - x))
}

/// Mirrors rows.
pub fn vflip(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    Tensor::from_fn(s, |[n, c, y, x]| t.at(n, c, s.h - 1 - y, x))
}

/// Normalized Gaussian taps for offsets `−r…r`, `r = ⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with clamped borders; `σ ≤ 0` is the identity.
pub fn gaussian_blur(t: &Tensor<f32>, sigma: f64) -> Tensor<f32> {
    if sigma <= 0.0 {
        return t.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let s = t.shape();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let rows = Tensor::from_fn(s, |[n, c, y, x]| {
        let acc: f64 = k.iter().enumerate().map(|(i, w)| w * t.at(n, c, y, clamp(x as i64 + i as i64 - r, s.w)) as f64).sum();
        acc as f32
    });
    Tensor::from_fn(s, |[n, c, y, x]| {
        let acc: f64 =
            k.iter().enumerate().map(|(i, w)| w * rows.at(n, c, clamp(y as i64 + i as i64 - r, s.h), x) as f64).sum();
        acc as f32
    })
}

/// Random draws of one augmentation, fixed before application so that
/// image and mask see the same geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub quarter_turns: usize,
    pub hflip: bool,
    pub vflip: bool,
    pub sigma: f64,
}

impl AugmentDraw {
    /// Draws only the enabled transforms, in a fixed order.
    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        Self {
            quarter_turns: if cfg.rotate { rng.gen_range(0..4) } else { 0 },
            hflip: cfg.hflip && rng.gen_bool(0.5),
            vflip: cfg.vflip && rng.gen_bool(0.5),
            sigma: if cfg.blur { rng.gen_range(0.0..=MAX_BLUR_SIGMA) } else { 0.0 },
        }
    }

    fn geometry(&self, t: &Tensor<f32>) -> Tensor<f32> {
        let mut out = rot90(t, self.quarter_turns);
        if self.hflip {
            out = hflip(&out);
        }
        if self.vflip {
            out = vflip(&out);
        }
        out
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        Sample {
            image: gaussian_blur(&self.geometry(&sample.image), self.sigma),
            mask: self.geometry(&sample.mask),
            ..sample.clone()
        }
    }
}

pub fn augment<R: Rng>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    AugmentDraw::sample(cfg, rng).apply(sample)
}
