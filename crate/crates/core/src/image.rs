//! Raster representation and the geometric operations detectors rely on.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real-valued raster with one or three interleaved channels.
///
/// Samples are stored row-major, channel-interleaved, in double precision.
/// Values are nominally in `[0, 255]`; residual rasters reuse the type with
/// signed values.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if samples.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Buffer with every sample set to `value`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    samples.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, samples)
    }

    /// Assemble an image from planar channel data (1 or 3 planes of `width * height`).
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        if planes.iter().any(|p| p.len() != width * height) {
            return Err(Error::invalid("plane length does not match dimensions"));
        }
        let mut samples = Vec::with_capacity(width * height * channels);
        for i in 0..width * height {
            for p in planes {
                samples.push(p[i]);
            }
        }
        Self::new(width, height, channels, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    /// Copy of channel `c` as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        assert!(c < self.channels, "channel {c} out of range");
        self.samples
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    /// Apply `f` to every sample. The result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.channels,
            self.samples.iter().map(|&v| f(v)).collect(),
        )
    }

    pub(crate) fn map_unchecked(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            samples: self.samples.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Self {
        self.map_unchecked(|v| v.clamp(0.0, 255.0))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

fn parse_header_token(bytes: &[u8], pos: &mut usize, path: &str, what: &str) -> Result<usize> {
    // skip whitespace and comment lines
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(path, format!("missing {what} in header")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, format!("unparsable {what} in header")))
}

/// Decode a binary PGM (`P5`) or PPM (`P6`) byte stream with maxval 255.
///
/// `origin` only labels error messages.
pub fn decode_pnm(bytes: &[u8], origin: &str) -> Result<ImageBuffer> {
    if bytes.len() < 2 {
        return Err(Error::format(origin, "file too short for a PNM header"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::format(
                origin,
                format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let mut pos = 2;
    let width = parse_header_token(bytes, &mut pos, origin, "width")?;
    let height = parse_header_token(bytes, &mut pos, origin, "height")?;
    let maxval = parse_header_token(bytes, &mut pos, origin, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(origin, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::format(
            origin,
            format!("maxval {maxval} not supported (only 255)"),
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(origin, "missing whitespace after maxval")),
    }
    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::format(
            origin,
            format!(
                "truncated payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    let samples = payload[..expected].iter().map(|&b| f64::from(b)).collect();
    ImageBuffer::new(width, height, channels, samples)
}

/// Encode as binary PGM/PPM, rounding half away from zero.
pub fn encode_pnm(img: &ImageBuffer) -> Result<Vec<u8>> {
    let (lo, hi) = img.min_max();
    if lo < 0.0 || hi > 255.0 {
        return Err(Error::invalid(format!(
            "samples must lie in [0,255] to be saved, found range [{lo}, {hi}]"
        )));
    }
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.samples.iter().map(|&v| v.round() as u8));
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, &path.display().to_string())
}

pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pnm(img)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// BT.601 full-range luma, unclamped.
pub fn to_luma(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.channels != 3 {
        return Err(Error::invalid("to_luma requires a 3-channel image"));
    }
    let samples = img
        .samples
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    ImageBuffer::new(img.width, img.height, 1, samples)
}

/// Luma for colour images, the image itself for single-channel ones.
pub fn luma_or_gray(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        img.clone()
    } else {
        to_luma(img).expect("three channels")
    }
}

/// JFIF (BT.601 full-range) RGB → YCbCr, returned as three planes.
pub fn rgb_to_ycbcr_planes(img: &ImageBuffer) -> Result<[Vec<f64>; 3]> {
    if img.channels != 3 {
        return Err(Error::invalid("YCbCr conversion requires a 3-channel image"));
    }
    let n = img.width * img.height;
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for p in img.samples.chunks_exact(3) {
        let (r, g, b) = (p[0], p[1], p[2]);
        y.push(0.299 * r + 0.587 * g + 0.114 * b);
        cb.push(-0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0);
        cr.push(0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0);
    }
    Ok([y, cb, cr])
}

pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let cb = cb - 128.0;
    let cr = cr - 128.0;
    [
        y + 1.402 * cr,
        y - 0.344_136 * cb - 0.714_136 * cr,
        y + 1.772 * cb,
    ]
}

/// Crop a `w`×`h` window anchored at `((width-w)/2, (height-h)/2)`.
pub fn center_crop(img: &ImageBuffer, w: usize, h: usize) -> Result<ImageBuffer> {
    if w == 0 || h == 0 || w > img.width || h > img.height {
        return Err(Error::invalid(format!(
            "cannot crop {w}x{h} from {}x{}",
            img.width, img.height
        )));
    }
    let x0 = (img.width - w) / 2;
    let y0 = (img.height - h) / 2;
    Ok(crop(img, x0, y0, w, h))
}

pub(crate) fn crop(img: &ImageBuffer, x0: usize, y0: usize, w: usize, h: usize) -> ImageBuffer {
    let c = img.channels;
    let mut samples = Vec::with_capacity(w * h * c);
    for y in y0..y0 + h {
        let start = (y * img.width + x0) * c;
        samples.extend_from_slice(&img.samples[start..start + w * c]);
    }
    ImageBuffer {
        width: w,
        height: h,
        channels: c,
        samples,
    }
}

/// Interpolation kernel used by resizing sweeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizeKernel {
    #[default]
    Bilinear,
}

pub fn resize(img: &ImageBuffer, scale: f64, kernel: ResizeKernel) -> Result<ImageBuffer> {
    match kernel {
        ResizeKernel::Bilinear => resize_bilinear(img, scale),
    }
}

fn axis_taps(dst_len: usize, src_len: usize, scale: f64) -> Vec<(usize, usize, f64)> {
    (0..dst_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) / scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = src.floor() as usize;
            let frac = src - i0 as f64;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resize with the half-pixel convention
/// `src = (dst + 0.5) / scale - 0.5`, clamped to the source extent.
pub fn resize_bilinear(img: &ImageBuffer, scale: f64) -> Result<ImageBuffer> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::invalid(format!("resize scale must be finite and > 0, got {scale}")));
    }
    let out_w = (img.width as f64 * scale).round() as usize;
    let out_h = (img.height as f64 * scale).round() as usize;
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "scale {scale} collapses {}x{} to zero size",
            img.width, img.height
        )));
    }
    let xs = axis_taps(out_w, img.width, scale);
    let ys = axis_taps(out_h, img.height, scale);
    let c = img.channels;
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a * (1.0 - t) + b * t };
    let mut samples = Vec::with_capacity(out_w * out_h * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = lerp(img.get(x0, y0, ch), img.get(x1, y0, ch), fx);
                let bottom = lerp(img.get(x0, y1, ch), img.get(x1, y1, ch), fx);
                samples.push(lerp(top, bottom, fy));
            }
        }
    }
    ImageBuffer::new(out_w, out_h, c, samples)
}

fn patch_anchors(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut anchors: Vec<usize> = (0..).map(|i| i * stride).take_while(|a| a + patch <= dim).collect();
    if let Some(&last) = anchors.last() {
        if last + patch < dim {
            anchors.push(dim - patch);
        }
    }
    anchors
}

/// Tile the image into `patch`×`patch` windows in raster order.
///
/// The final row and column of windows are anchored at `dim - patch` so the
/// whole image is covered; with `stride <= patch` every pixel lies in some patch.
pub fn extract_patches(img: &ImageBuffer, patch: usize, stride: usize) -> Result<Vec<ImageBuffer>> {
    if patch == 0 || patch > img.width.min(img.height) {
        return Err(Error::invalid(format!(
            "patch {patch} does not fit a {}x{} image",
            img.width, img.height
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("patch stride must be >= 1"));
    }
    let xs = patch_anchors(img.width, patch, stride);
    let ys = patch_anchors(img.height, patch, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .map(|(x, y)| crop(img, x, y, patch, patch))
        .collect())
}

pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let c = img.channels;
    let mut samples = Vec::with_capacity(img.samples.len());
    for row in img.samples.chunks_exact(img.width * c) {
        for px in row.chunks_exact(c).rev() {
            samples.extend_from_slice(px);
        }
    }
    ImageBuffer {
        samples,
        ..img.clone()
    }
}

/// Peak signal-to-noise ratio in dB against a 255 peak; infinite for equal images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("psnr requires images of equal shape"));
    }
    let mse = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.samples.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 1, |x, y, _| (y * w + x) as f64).unwrap()
    }

    #[test]
    fn decodes_p5_bytes_directly() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend([0u8, 128, 255, 64]);
        let img = decode_pnm(&bytes, "mem").unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.samples(), &[0.0, 128.0, 255.0, 64.0]);
    }

    #[test]
    fn decodes_p6_pixel() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([255u8, 0, 0]);
        let img = decode_pnm(&bytes, "mem").unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.samples(), &[255.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_wide_maxval_and_truncation() {
        let mut bytes = b"P5 2 2 65535\n".to_vec();
        bytes.extend([0u8; 8]);
        match decode_pnm(&bytes, "mem") {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("maxval")),
            other => panic!("expected format error, got {other:?}"),
        }
        let mut short = b"P6 2 2 255\n".to_vec();
        short.extend([0u8; 5]);
        match decode_pnm(&short, "mem") {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("truncated")),
            other => panic!("expected truncation error, got {other:?}"),
        }
        assert!(decode_pnm(b"P3 1 1 255\n0 0 0", "mem").is_err());
        assert!(decode_pnm(b"P5 x 1 255\n", "mem").is_err());
    }

    #[test]
    fn save_rounds_half_away_from_zero() {
        let img = ImageBuffer::new(2, 1, 1, vec![127.5, 127.4]).unwrap();
        let bytes = encode_pnm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[128, 127]);
    }

    #[test]
    fn save_load_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let img = ImageBuffer::from_fn(4, 4, 3, |x, y, c| ((x * 37 + y * 11 + c * 101) % 256) as f64).unwrap();
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
        assert!(save_image(&img, dir.path().join("missing/dir/x.ppm")).is_err());
        let bad = ImageBuffer::new(1, 1, 1, vec![300.0]).unwrap();
        assert!(save_image(&bad, &path).is_err());
    }

    #[test]
    fn luma_coefficients() {
        let red = ImageBuffer::new(1, 1, 3, vec![255.0, 0.0, 0.0]).unwrap();
        assert!((to_luma(&red).unwrap().samples()[0] - 76.245).abs() < 1e-12);
        let green = ImageBuffer::new(1, 1, 3, vec![0.0, 255.0, 0.0]).unwrap();
        assert!((to_luma(&green).unwrap().samples()[0] - 149.685).abs() < 1e-12);
        for g in [0.0, 17.0, 128.0, 255.0] {
            let gray = ImageBuffer::new(1, 1, 3, vec![g; 3]).unwrap();
            assert!((to_luma(&gray).unwrap().samples()[0] - g).abs() < 1e-12);
        }
        assert!(to_luma(&ramp(2, 2)).is_err());
    }

    #[test]
    fn center_crop_window() {
        let img = ramp(4, 4);
        assert_eq!(center_crop(&img, 4, 4).unwrap(), img);
        assert_eq!(center_crop(&img, 2, 2).unwrap().samples(), &[5.0, 6.0, 9.0, 10.0]);
        assert!(center_crop(&img, 5, 5).is_err());
    }

    #[test]
    fn bilinear_half_pixel_mapping() {
        let img = ImageBuffer::new(2, 1, 1, vec![0.0, 100.0]).unwrap();
        let up = resize_bilinear(&img, 2.0).unwrap();
        assert_eq!((up.width(), up.height()), (4, 2));
        assert_eq!(&up.samples()[..4], &[0.0, 25.0, 75.0, 100.0]);
        assert_eq!(&up.samples()[4..], &[0.0, 25.0, 75.0, 100.0]);
    }

    #[test]
    fn bilinear_identity_and_constants() {
        let img = ImageBuffer::from_fn(7, 5, 3, |x, y, c| (x * 13 + y * 7 + c) as f64 * 1.37).unwrap();
        assert_eq!(resize_bilinear(&img, 1.0).unwrap(), img);
        let flat = ImageBuffer::filled(9, 6, 3, 42.0).unwrap();
        for s in [0.3, 0.5, 1.3, 2.0] {
            let r = resize_bilinear(&flat, s).unwrap();
            assert!(r.samples().iter().all(|&v| (v - 42.0).abs() < 1e-12));
        }
        assert!(resize_bilinear(&img, f64::NAN).is_err());
        assert!(resize_bilinear(&img, 0.01).is_err());
    }

    #[test]
    fn patch_tiling() {
        let img = ImageBuffer::filled(64, 64, 1, 1.0).unwrap();
        assert_eq!(extract_patches(&img, 32, 32).unwrap().len(), 4);
        let whole = ramp(16, 16);
        let p = extract_patches(&whole, 16, 3).unwrap();
        assert_eq!(p, vec![whole.clone()]);
        let wide = ImageBuffer::from_fn(65, 64, 1, |x, _, _| x as f64).unwrap();
        let p = extract_patches(&wide, 32, 32).unwrap();
        assert_eq!(p.len(), 6);
        let first_cols: Vec<f64> = p[..3].iter().map(|q| q.samples()[0]).collect();
        assert_eq!(first_cols, vec![0.0, 32.0, 33.0]);
        assert!(extract_patches(&whole, 17, 1).is_err());
        assert!(extract_patches(&whole, 4, 0).is_err());
    }

    #[test]
    fn flip_reverses_pixels_not_channels() {
        let img = ImageBuffer::new(2, 1, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(flip_horizontal(&img).samples(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    }

    fn int_image() -> impl Strategy<Value = ImageBuffer> {
        (1usize..9, 1usize..9, prop::bool::ANY).prop_flat_map(|(w, h, color)| {
            let c = if color { 3 } else { 1 };
            prop::collection::vec(0u8..=255, w * h * c).prop_map(move |v| {
                ImageBuffer::new(w, h, c, v.into_iter().map(f64::from).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn pnm_roundtrip_is_identity(img in int_image()) {
            let bytes = encode_pnm(&img).unwrap();
            prop_assert_eq!(decode_pnm(&bytes, "mem").unwrap(), img);
        }

        #[test]
        fn resize_stays_within_input_range(img in int_image(), scale in 0.2f64..3.0) {
            if let Ok(out) = resize_bilinear(&img, scale) {
                for c in 0..img.channels() {
                    let src = img.plane(c);
                    let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    for v in out.plane(c) {
                        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                    }
                }
            }
        }

        #[test]
        fn patches_cover_every_pixel(w in 4usize..40, h in 4usize..40, patch in 1usize..8, stride in 1usize..10) {
            let patch = patch.min(w).min(h);
            let stride = stride.min(patch);
            let img = ImageBuffer::from_fn(w, h, 1, |x, y, _| (y * w + x) as f64).unwrap();
            let mut seen = vec![false; w * h];
            for p in extract_patches(&img, patch, stride).unwrap() {
                for &v in p.samples() {
                    seen[v as usize] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
