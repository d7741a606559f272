//! Noise residuals, generator fingerprints and source attribution.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{luma_or_gray, save_image, ImageBuffer};

/// Orientation of the third-order derivative filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Taps of the third-order derivative filter, applied as a convolution.
pub const THIRD_ORDER: [f64; 4] = [1.0, -3.0, 3.0, -1.0];

/// Valid-mode third-order derivative `out[i] = x[i+3] − 3x[i+2] + 3x[i+1] − x[i]`
/// along rows (horizontal) or columns (vertical). The output loses three
/// samples along the filtered axis and is not clamped.
pub fn highpass_residual(img: &ImageBuffer, direction: Direction) -> Result<ImageBuffer> {
    if img.channels() != 1 {
        return Err(Error::invalid("highpass_residual expects a single-channel image"));
    }
    let (w, h) = (img.width(), img.height());
    if w < 4 || h < 4 {
        return Err(Error::invalid(format!("image {w}x{h} too small for the 4-tap filter")));
    }
    let s = img.samples();
    let k = THIRD_ORDER;
    match direction {
        Direction::Horizontal => {
            let mut out = Vec::with_capacity((w - 3) * h);
            for y in 0..h {
                let row = &s[y * w..(y + 1) * w];
                for x in 0..w - 3 {
                    out.push(k[0] * row[x + 3] + k[1] * row[x + 2] + k[2] * row[x + 1] + k[3] * row[x]);
                }
            }
            ImageBuffer::new(w - 3, h, 1, out)
        }
        Direction::Vertical => {
            let mut out = Vec::with_capacity(w * (h - 3));
            for y in 0..h - 3 {
                for x in 0..w {
                    let at = |dy: usize| s[(y + dy) * w + x];
                    out.push(k[0] * at(3) + k[1] * at(2) + k[2] * at(1) + k[3] * at(0));
                }
            }
            ImageBuffer::new(w, h - 3, 1, out)
        }
    }
}

fn median9(mut v: [f64; 9]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[4]
}

/// `img − median3×3(img)` with edge replication; signed.
pub fn denoise_residual(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.channels() != 1 {
        return Err(Error::invalid("denoise_residual expects a single-channel image"));
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    if w < 3 || h < 3 {
        return Err(Error::invalid("denoise_residual needs at least 3x3 pixels"));
    }
    let s = img.samples();
    let at = |x: i64, y: i64| s[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut out = Vec::with_capacity(s.len());
    for y in 0..h {
        for x in 0..w {
            let mut win = [0.0; 9];
            for (i, (dx, dy)) in (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dx, dy))).enumerate() {
                win[i] = at(x + dx, y + dy);
            }
            out.push(at(x, y) - median9(win));
        }
    }
    ImageBuffer::new(img.width(), img.height(), 1, out)
}

/// Averaged, zero-mean noise residual of one generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Fingerprint {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub count: usize,
    pub source: String,
}

pub const MIN_FINGERPRINT_IMAGES: usize = 8;

/// Mean of the denoising residuals of `imgs` (luma for colour inputs) with
/// its global mean removed.
pub fn estimate_fingerprint(imgs: &[ImageBuffer], source: &str) -> Result<Fingerprint> {
    if imgs.len() < MIN_FINGERPRINT_IMAGES {
        return Err(Error::Degenerate(format!(
            "fingerprint for '{source}' needs at least {MIN_FINGERPRINT_IMAGES} images, got {}",
            imgs.len()
        )));
    }
    let (w, h) = (imgs[0].width(), imgs[0].height());
    let mut acc = vec![0.0; w * h];
    for (i, img) in imgs.iter().enumerate() {
        if img.width() != w || img.height() != h {
            return Err(Error::invalid(format!("image {i} size differs from image 0")));
        }
        let res = denoise_residual(&luma_or_gray(img))?;
        for (a, r) in acc.iter_mut().zip(res.samples()) {
            *a += r;
        }
    }
    let n = imgs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    acc.iter_mut().for_each(|a| *a -= mean);
    Ok(Fingerprint {
        width: w,
        height: h,
        values: acc,
        count: imgs.len(),
        source: source.to_string(),
    })
}

/// Normalised cross-correlation of two equal-length vectors after removing
/// their means; 0 when either is constant.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

pub fn correlate(residual: &ImageBuffer, fp: &Fingerprint) -> Result<f64> {
    if residual.width() != fp.width || residual.height() != fp.height || residual.channels() != 1 {
        return Err(Error::invalid(format!(
            "residual {}x{}x{} does not match fingerprint {}x{}",
            residual.width(),
            residual.height(),
            residual.channels(),
            fp.width,
            fp.height
        )));
    }
    Ok(ncc(residual.samples(), &fp.values))
}

/// Index of the best-correlated fingerprint (lowest index on ties) and its score.
pub fn attribute(img: &ImageBuffer, fps: &[Fingerprint]) -> Result<(usize, f64)> {
    if fps.is_empty() {
        return Err(Error::invalid("attribute needs at least one fingerprint"));
    }
    let res = denoise_residual(&luma_or_gray(img))?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, fp) in fps.iter().enumerate() {
        let score = correlate(&res, fp)?;
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best)
}

impl Fingerprint {
    /// Linear rescale to `[0, 255]`, returning the image with `(offset, scale)`
    /// such that `pixel = (value − offset) · scale`.
    pub fn to_display(&self) -> (ImageBuffer, f64, f64) {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        let img = ImageBuffer::new(
            self.width,
            self.height,
            1,
            self.values.iter().map(|v| ((v - lo) * scale).clamp(0.0, 255.0)).collect(),
        )
        .expect("finite fingerprint");
        (img, lo, scale)
    }

    /// Write the PGM view plus a `<path>.txt` sidecar with count, source and rescale.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (img, offset, scale) = self.to_display();
        save_image(&img, path)?;
        let mut side = String::new();
        let _ = writeln!(side, "source = {}", self.source);
        let _ = writeln!(side, "count = {}", self.count);
        let _ = writeln!(side, "offset = {offset}");
        let _ = writeln!(side, "scale = {scale}");
        let sidecar = path.with_extension("txt");
        std::fs::write(&sidecar, side).map_err(|e| Error::io(sidecar, e))
    }
}
