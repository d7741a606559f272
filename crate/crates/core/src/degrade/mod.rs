//! Deterministic degradations and augmentation policies.

mod jpeg;

pub use jpeg::{fdct8x8, idct8x8, jpeg_roundtrip, quality_scale, scaled_table, CHROMA_BASE, LUMA_BASE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{flip_horizontal, ImageBuffer};
use crate::rng::Rng;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with edge replication; `sigma == 0` is the identity.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid(format!("blur sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let planes: Vec<Vec<f64>> = img
        .planes()
        .into_iter()
        .map(|p| {
            let mut tmp = vec![0.0; p.len()];
            for y in 0..h {
                for x in 0..w {
                    tmp[(y * w + x) as usize] = kernel
                        .iter()
                        .enumerate()
                        .map(|(k, wk)| wk * p[(y * w + (x + k as i64 - r).clamp(0, w - 1)) as usize])
                        .sum();
                }
            }
            let mut out = vec![0.0; p.len()];
            for y in 0..h {
                for x in 0..w {
                    out[(y * w + x) as usize] = kernel
                        .iter()
                        .enumerate()
                        .map(|(k, wk)| wk * tmp[((y + k as i64 - r).clamp(0, h - 1) * w + x) as usize])
                        .sum();
                }
            }
            out
        })
        .collect();
    ImageBuffer::from_planes(img.width(), img.height(), &planes)
}

/// Add i.i.d. N(0, σ²) noise to every sample and clamp to `[0, 255]`.
pub fn add_gaussian_noise(img: &ImageBuffer, sigma: f64, rng: &mut Rng) -> Result<ImageBuffer> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let samples = img
        .samples()
        .iter()
        .map(|&v| (v + sigma * rng.normal()).clamp(0.0, 255.0))
        .collect();
    ImageBuffer::new(img.width(), img.height(), img.channels(), samples)
}

pub const CUTOUT_FILL: f64 = 128.0;

/// Fill a square of side `round(frac · min(w, h))` with mid-gray at a random
/// position fully inside the image.
pub fn cutout(img: &ImageBuffer, frac: f64, rng: &mut Rng) -> Result<ImageBuffer> {
    let short = img.width().min(img.height());
    if !(frac > 0.0 && frac < 1.0) || frac * (short as f64) < 1.0 {
        return Err(Error::invalid(format!("cut-out fraction {frac} too small or out of range")));
    }
    let side = ((frac * short as f64).round() as usize).clamp(1, short);
    let x0 = rng.int_range(0, (img.width() - side) as i64) as usize;
    let y0 = rng.int_range(0, (img.height() - side) as i64) as usize;
    let c = img.channels();
    let mut samples = img.samples().to_vec();
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let base = (y * img.width() + x) * c;
            samples[base..base + c].fill(CUTOUT_FILL);
        }
    }
    ImageBuffer::new(img.width(), img.height(), c, samples)
}

/// `clamp(c·(v − 128) + 128 + b, 0, 255)`.
pub fn brightness_contrast(img: &ImageBuffer, b: f64, c: f64) -> Result<ImageBuffer> {
    if !(c > 0.0) || !c.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("contrast must be > 0 (got {c}), brightness finite")));
    }
    Ok(img.map_unchecked(|v| (c * (v - 128.0) + 128.0 + b).clamp(0.0, 255.0)))
}

/// Stage probabilities and parameter ranges for [`apply_policy`].
///
/// Stages run in a fixed order: flip, brightness/contrast, cut-out, noise,
/// blur, JPEG. Each fires independently with its probability and draws its
/// parameters uniformly from its range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub color_prob: f64,
    pub brightness_range: [f64; 2],
    pub contrast_range: [f64; 2],
    pub cutout_prob: f64,
    pub cutout_frac: f64,
    pub noise_prob: f64,
    pub noise_sigma_range: [f64; 2],
    pub blur_prob: f64,
    pub blur_sigma_range: [f64; 2],
    pub jpeg_prob: f64,
    pub jpeg_quality_range: [u32; 2],
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self::none()
    }
}

impl AugmentPolicy {
    /// Every stage disabled.
    pub fn none() -> Self {
        Self {
            flip_prob: 0.0,
            color_prob: 0.0,
            brightness_range: [0.0, 0.0],
            contrast_range: [1.0, 1.0],
            cutout_prob: 0.0,
            cutout_frac: 0.25,
            noise_prob: 0.0,
            noise_sigma_range: [0.0, 0.0],
            blur_prob: 0.0,
            blur_sigma_range: [0.0, 0.0],
            jpeg_prob: 0.0,
            jpeg_quality_range: [100, 100],
        }
    }

    /// Gaussian blurring only.
    pub fn blur() -> Self {
        Self {
            blur_prob: 0.5,
            blur_sigma_range: [0.0, 3.0],
            ..Self::none()
        }
    }

    /// Blur plus JPEG compression, each with probability one half.
    pub fn blur_jpeg() -> Self {
        Self {
            blur_prob: 0.5,
            blur_sigma_range: [0.0, 3.0],
            jpeg_prob: 0.5,
            jpeg_quality_range: [30, 100],
            ..Self::none()
        }
    }

    /// Blur and JPEG plus noise, flips, cut-out and brightness/contrast.
    pub fn strong() -> Self {
        Self {
            flip_prob: 0.5,
            color_prob: 0.5,
            brightness_range: [-20.0, 20.0],
            contrast_range: [0.8, 1.2],
            cutout_prob: 0.3,
            cutout_frac: 0.25,
            noise_prob: 0.3,
            noise_sigma_range: [0.0, 6.0],
            ..Self::blur_jpeg()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Self::none()),
            "blur" => Some(Self::blur()),
            "blur-jpeg" => Some(Self::blur_jpeg()),
            "strong" => Some(Self::strong()),
            _ => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        [
            self.flip_prob,
            self.color_prob,
            self.cutout_prob,
            self.noise_prob,
            self.blur_prob,
            self.jpeg_prob,
        ]
        .iter()
        .all(|&p| p == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("flip_prob", self.flip_prob),
            ("color_prob", self.color_prob),
            ("cutout_prob", self.cutout_prob),
            ("noise_prob", self.noise_prob),
            ("blur_prob", self.blur_prob),
            ("jpeg_prob", self.jpeg_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        let ranges = [
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
            ("noise_sigma_range", self.noise_sigma_range),
            ("blur_sigma_range", self.blur_sigma_range),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("{name} [{lo}, {hi}] is not an ordered interval")));
            }
        }
        if self.contrast_range[0] <= 0.0 {
            return Err(Error::invalid("contrast_range must be positive"));
        }
        if self.noise_sigma_range[0] < 0.0 || self.blur_sigma_range[0] < 0.0 {
            return Err(Error::invalid("sigma ranges must be non-negative"));
        }
        let [qlo, qhi] = self.jpeg_quality_range;
        if !(1 <= qlo && qlo <= qhi && qhi <= 100) {
            return Err(Error::invalid(format!("jpeg_quality_range [{qlo}, {qhi}] not within 1..=100")));
        }
        if !(self.cutout_frac > 0.0 && self.cutout_frac < 1.0) {
            return Err(Error::invalid("cutout_frac must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Apply `policy` to `img`; the result is fully determined by `rng`'s seed.
pub fn apply_policy(img: &ImageBuffer, policy: &AugmentPolicy, rng: &mut Rng) -> Result<ImageBuffer> {
    policy.validate()?;
    let mut out = img.clone();
    if rng.bernoulli(policy.flip_prob) {
        out = flip_horizontal(&out);
    }
    if rng.bernoulli(policy.color_prob) {
        let b = rng.uniform_range(policy.brightness_range[0], policy.brightness_range[1]);
        let c = rng.uniform_range(policy.contrast_range[0], policy.contrast_range[1]);
        out = brightness_contrast(&out, b, c)?;
    }
    if rng.bernoulli(policy.cutout_prob) && policy.cutout_frac * out.width().min(out.height()) as f64 >= 1.0 {
        out = cutout(&out, policy.cutout_frac, rng)?;
    }
    if rng.bernoulli(policy.noise_prob) {
        let s = rng.uniform_range(policy.noise_sigma_range[0], policy.noise_sigma_range[1]);
        out = add_gaussian_noise(&out, s, rng)?;
    }
    if rng.bernoulli(policy.blur_prob) {
        let s = rng.uniform_range(policy.blur_sigma_range[0], policy.blur_sigma_range[1]);
        out = gaussian_blur(&out, s)?;
    }
    if rng.bernoulli(policy.jpeg_prob) {
        let [lo, hi] = policy.jpeg_quality_range;
        let q = rng.int_range(i64::from(lo), i64::from(hi)) as u32;
        out = jpeg_roundtrip(&out, q)?;
    }
    Ok(out)
}
