//! Fourier-domain analysis of single-channel images.
//!
//! Transforms are power-of-two only and unnormalised in the forward
//! direction; the inverse carries the `1/N²` factor. Coefficient `(u, v)` is
//! stored at `v * width + u` with DC at index 0.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::image::ImageBuffer;

/// In-place iterative radix-2 FFT. `inverse` flips the twiddle sign but does
/// not scale.
pub fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    assert!(n.is_power_of_two(), "FFT length must be a power of two");
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let step = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = data[start + k];
                let b = data[start + k + half] * twiddles[k];
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn fft_rows_cols(data: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    for row in data.chunks_exact_mut(width) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        fft_in_place(&mut col, inverse);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
}

/// Complex 2-D spectrum of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub width: usize,
    pub height: usize,
    pub coefficients: Vec<Complex64>,
    /// Free-form identifier of the source image.
    pub provenance: Option<String>,
}

impl Spectrum {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Complex64 {
        self.coefficients[v * self.width + u]
    }

    pub fn power(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.norm()).collect()
    }

    pub fn with_provenance(mut self, id: impl Into<String>) -> Self {
        self.provenance = Some(id.into());
        self
    }
}

/// Forward 2-D DFT of a square, power-of-two, single-channel image.
pub fn fft2d(img: &ImageBuffer) -> Result<Spectrum> {
    if img.channels() != 1 {
        return Err(Error::invalid("fft2d requires a single-channel image"));
    }
    let (w, h) = (img.width(), img.height());
    if w != h || !w.is_power_of_two() {
        return Err(Error::invalid(format!(
            "fft2d requires a square power-of-two image, got {w}x{h}"
        )));
    }
    let mut data: Vec<Complex64> = img.samples().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_rows_cols(&mut data, w, h, false);
    Ok(Spectrum {
        width: w,
        height: h,
        coefficients: data,
        provenance: None,
    })
}

/// Inverse of [`fft2d`], returning the real part scaled by `1/N²`.
pub fn ifft2d(spec: &Spectrum) -> Result<ImageBuffer> {
    let mut data = spec.coefficients.clone();
    fft_rows_cols(&mut data, spec.width, spec.height, true);
    let scale = 1.0 / (spec.width * spec.height) as f64;
    ImageBuffer::new(
        spec.width,
        spec.height,
        1,
        data.iter().map(|c| c.re * scale).collect(),
    )
}

/// `log(1 + m)` per bin, DC moved to the centre, rescaled to `[0, 255]`.
fn magnitude_display(mags: &[f64], width: usize, height: usize) -> ImageBuffer {
    let logs: Vec<f64> = mags.iter().map(|m| m.ln_1p()).collect();
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let mut out = vec![0.0; width * height];
    for v in 0..height {
        for u in 0..width {
            let sv = (v + height / 2) % height;
            let su = (u + width / 2) % width;
            let value = logs[v * width + u];
            out[sv * width + su] = if span > 0.0 { (value - lo) / span * 255.0 } else { 0.0 };
        }
    }
    ImageBuffer::new(width, height, 1, out).expect("finite display values")
}

/// Centred log-magnitude view of a spectrum, scaled to `[0, 255]`.
pub fn log_magnitude(spec: &Spectrum) -> ImageBuffer {
    magnitude_display(&spec.magnitude(), spec.width, spec.height)
}

/// Mean magnitude spectrum over `imgs`, shown like [`log_magnitude`].
pub fn average_spectrum(imgs: &[ImageBuffer]) -> Result<ImageBuffer> {
    let first = imgs
        .first()
        .ok_or_else(|| Error::invalid("average_spectrum needs at least one image"))?;
    let (w, h) = (first.width(), first.height());
    let mut acc = vec![0.0; w * h];
    for (i, img) in imgs.iter().enumerate() {
        if img.width() != w || img.height() != h {
            return Err(Error::invalid(format!("image {i} size differs from image 0")));
        }
        for (a, m) in acc.iter_mut().zip(fft2d(img)?.magnitude()) {
            *a += m;
        }
    }
    let n = imgs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(magnitude_display(&acc, w, h))
}

/// Mean power per integer radius around DC.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfile {
    /// `N/2` bins; bin `k` averages radii in `[k, k+1)`. The outermost bin also
    /// absorbs the corner frequencies beyond `N/2`.
    pub bins: Vec<f64>,
    pub counts: Vec<usize>,
    /// Factor the raw bin means were divided by (bin 0's value, or 1).
    pub normalization: f64,
}

#[inline]
fn signed_freq(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

pub fn azimuthal_average(spec: &Spectrum) -> RadialProfile {
    let n = spec.width;
    let nbins = (n / 2).max(1);
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for v in 0..spec.height {
        let fv = signed_freq(v, spec.height);
        for u in 0..n {
            let fu = signed_freq(u, n);
            let bin = ((fu * fu + fv * fv).sqrt().floor() as usize).min(nbins - 1);
            sums[bin] += spec.at(u, v).norm_sqr();
            counts[bin] += 1;
        }
    }
    let mut bins: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let normalization = if bins[0] > 0.0 { bins[0] } else { 1.0 };
    bins.iter_mut().for_each(|b| *b /= normalization);
    RadialProfile {
        bins,
        counts,
        normalization,
    }
}

/// Spectral feature families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralKind {
    /// The radial power profile (`N/2` values).
    Radial,
    /// Peak-to-neighbourhood power ratios at half- and quarter-band centres (8 values).
    PeakGrid,
}

impl SpectralKind {
    pub fn tag(self) -> &'static str {
        match self {
            SpectralKind::Radial => "spec-radial",
            SpectralKind::PeakGrid => "spec-peaks",
        }
    }
}

impl FromStr for SpectralKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" | "spec-radial" => Ok(SpectralKind::Radial),
            "peak-grid" | "spec-peaks" => Ok(SpectralKind::PeakGrid),
            other => Err(Error::invalid(format!("unknown spectral feature kind '{other}'"))),
        }
    }
}

/// Number of peak-grid features.
pub const PEAK_GRID_LEN: usize = 8;

/// Centres `{0, N/4, N/2}² \ {(0,0)}` as `(u, v)`, v-major.
pub fn peak_grid_centres(n: usize) -> Vec<(usize, usize)> {
    let marks = [0, n / 4, n / 2];
    marks
        .iter()
        .flat_map(|&v| marks.iter().map(move |&u| (u, v)))
        .filter(|&c| c != (0, 0))
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    }
}

/// Mean power in the 3×3 window at each centre over the median power of the
/// surrounding 11×11 annulus (indices wrap around).
pub fn peak_grid_ratios(spec: &Spectrum) -> Vec<f64> {
    let n = spec.width as i64;
    let power = spec.power();
    let floor = 1e-12 * power.iter().sum::<f64>() / power.len() as f64;
    let at = |u: i64, v: i64| power[(v.rem_euclid(n) * n + u.rem_euclid(n)) as usize];
    peak_grid_centres(spec.width)
        .into_iter()
        .map(|(u, v)| {
            let (u, v) = (u as i64, v as i64);
            let mut window = 0.0;
            let mut ring = Vec::with_capacity(112);
            for dv in -5..=5i64 {
                for du in -5..=5i64 {
                    let p = at(u + du, v + dv);
                    if du.abs() <= 1 && dv.abs() <= 1 {
                        window += p;
                    } else {
                        ring.push(p);
                    }
                }
            }
            let window = window / 9.0;
            if window == 0.0 {
                0.0
            } else {
                window / median(&mut ring).max(floor).max(f64::MIN_POSITIVE)
            }
        })
        .collect()
}

/// Spectral features of a square power-of-two single-channel image.
pub fn spectral_features(img: &ImageBuffer, kind: SpectralKind) -> Result<FeatureVector> {
    let spec = fft2d(img)?;
    let values = match kind {
        SpectralKind::Radial => azimuthal_average(&spec).bins,
        SpectralKind::PeakGrid => peak_grid_ratios(&spec),
    };
    Ok(FeatureVector::new(kind.tag(), values))
}

/// Linearly resample a profile onto `len` points spanning the same
/// normalised frequency range.
pub fn resample_profile(profile: &[f64], len: usize) -> Vec<f64> {
    if profile.len() == len || profile.is_empty() {
        return profile.to_vec();
    }
    if profile.len() == 1 {
        return vec![profile[0]; len];
    }
    let ratio = profile.len() as f64 / len as f64;
    (0..len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (profile.len() - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(profile.len() - 1);
            let t = pos - i0 as f64;
            profile[i0] * (1.0 - t) + profile[i1] * t
        })
        .collect()
}
