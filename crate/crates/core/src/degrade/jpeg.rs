//! In-memory JPEG round-trip.
//!
//! Pipeline: RGB→YCbCr (BT.601 full range), 4:2:0 chroma by 2×2 box average,
//! edge-replicated padding to 8×8 blocks, level shift, orthonormal DCT-II,
//! quantisation with the Annex K tables scaled by quality, inverse DCT,
//! nearest-neighbour chroma upsampling, YCbCr→RGB and clamping. No entropy
//! coding is performed; only the lossy stages are reproduced.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::{rgb_to_ycbcr_planes, ycbcr_to_rgb, ImageBuffer};

#[rustfmt::skip]
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality scaling factor `S` (percent).
pub fn quality_scale(quality: u32) -> u32 {
    if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    }
}

/// Scale a base table for `quality`, clamping each step to `[1, 255]`.
pub fn scaled_table(base: &[u16; 64], quality: u32) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("JPEG quality must be in 1..=100, got {quality}")));
    }
    let s = quality_scale(quality);
    let mut out = [0u16; 64];
    for (o, &q) in out.iter_mut().zip(base) {
        *o = ((u32::from(q) * s + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(out)
}

fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (k, row) in m.iter_mut().enumerate() {
            let alpha = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = alpha * (((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI) / 16.0).cos();
            }
        }
        m
    })
}

/// Orthonormal 2-D DCT-II of an 8×8 block (row-major).
pub fn fdct8x8(block: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    // tmp = C · X
    for k in 0..8 {
        for x in 0..8 {
            tmp[k * 8 + x] = (0..8).map(|n| c[k][n] * block[n * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    // out = tmp · Cᵀ
    for k in 0..8 {
        for l in 0..8 {
            out[k * 8 + l] = (0..8).map(|n| tmp[k * 8 + n] * c[l][n]).sum();
        }
    }
    out
}

/// Inverse of [`fdct8x8`].
pub fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    // tmp = Cᵀ · F
    for n in 0..8 {
        for l in 0..8 {
            tmp[n * 8 + l] = (0..8).map(|k| c[k][n] * coef[k * 8 + l]).sum();
        }
    }
    let mut out = [0.0; 64];
    // out = tmp · C
    for n in 0..8 {
        for m in 0..8 {
            out[n * 8 + m] = (0..8).map(|l| tmp[n * 8 + l] * c[l][m]).sum();
        }
    }
    out
}

/// Quantise and dequantise one plane block by block.
fn code_plane(plane: &[f64], w: usize, h: usize, table: &[u16; 64]) -> Vec<f64> {
    let pw = w.div_ceil(8) * 8;
    let ph = h.div_ceil(8) * 8;
    let at = |x: usize, y: usize| plane[y.min(h - 1) * w + x.min(w - 1)];
    let mut out = vec![0.0; w * h];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = at(bx + x, by + y) - 128.0;
                }
            }
            let mut coef = fdct8x8(&block);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = f64::from(q);
                *c = (*c / q).round() * q;
            }
            let rec = idct8x8(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    let (ix, iy) = (bx + x, by + y);
                    if ix < w && iy < h {
                        out[iy * w + ix] = rec[y * 8 + x] + 128.0;
                    }
                }
            }
        }
    }
    out
}

fn subsample_420(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let cw = w.div_ceil(2);
    let ch = h.div_ceil(2);
    let at = |x: usize, y: usize| plane[y.min(h - 1) * w + x.min(w - 1)];
    let mut out = Vec::with_capacity(cw * ch);
    for y in 0..ch {
        for x in 0..cw {
            let (x0, y0) = (2 * x, 2 * y);
            out.push(0.25 * (at(x0, y0) + at(x0 + 1, y0) + at(x0, y0 + 1) + at(x0 + 1, y0 + 1)));
        }
    }
    (out, cw, ch)
}

/// Simulated JPEG compression/decompression at `quality` (1..=100).
pub fn jpeg_roundtrip(img: &ImageBuffer, quality: u32) -> Result<ImageBuffer> {
    let luma_q = scaled_table(&LUMA_BASE, quality)?;
    let (w, h) = (img.width(), img.height());
    if img.channels() == 1 {
        let out = code_plane(img.samples(), w, h, &luma_q);
        return Ok(ImageBuffer::new(w, h, 1, out)?.clamped());
    }
    let chroma_q = scaled_table(&CHROMA_BASE, quality)?;
    let [y, cb, cr] = rgb_to_ycbcr_planes(img)?;
    let y = code_plane(&y, w, h, &luma_q);
    let (cb, cw, chh) = subsample_420(&cb, w, h);
    let (cr, _, _) = subsample_420(&cr, w, h);
    let cb = code_plane(&cb, cw, chh, &chroma_q);
    let cr = code_plane(&cr, cw, chh, &chroma_q);
    let mut samples = Vec::with_capacity(w * h * 3);
    for py in 0..h {
        for px in 0..w {
            let ci = (py / 2) * cw + px / 2;
            samples.extend(ycbcr_to_rgb(y[py * w + px], cb[ci], cr[ci]));
        }
    }
    Ok(ImageBuffer::new(w, h, 3, samples)?.clamped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;

    #[test]
    fn quality_fifty_is_the_base_table() {
        assert_eq!(quality_scale(50), 100);
        assert_eq!(scaled_table(&LUMA_BASE, 50).unwrap(), LUMA_BASE);
        assert_eq!(scaled_table(&CHROMA_BASE, 50).unwrap(), CHROMA_BASE);
        assert!(scaled_table(&LUMA_BASE, 100).unwrap().iter().all(|&q| q == 1));
        // S = 5000/10 = 500: 16*500/100 = 80
        assert_eq!(scaled_table(&LUMA_BASE, 10).unwrap()[0], 80);
        assert!(jpeg_roundtrip(&ImageBuffer::filled(8, 8, 1, 0.0).unwrap(), 0).is_err());
        assert!(jpeg_roundtrip(&ImageBuffer::filled(8, 8, 1, 0.0).unwrap(), 101).is_err());
    }

    #[test]
    fn dct_is_orthonormal() {
        let block: [f64; 64] = std::array::from_fn(|i| ((i * 37) % 101) as f64 - 50.0);
        let coef = fdct8x8(&block);
        let energy_in: f64 = block.iter().map(|v| v * v).sum();
        let energy_out: f64 = coef.iter().map(|v| v * v).sum();
        assert!((energy_in - energy_out).abs() < 1e-9 * energy_in);
        let back = idct8x8(&coef);
        for (a, b) in block.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // DC of a constant block is 8 * value.
        let flat = [3.0; 64];
        assert!((fdct8x8(&flat)[0] - 24.0).abs() < 1e-12);
    }

    /// A constant block has only a DC coefficient 8·(g−128), so the
    /// reconstruction error is bounded by half a DC step divided by 8.
    #[test]
    fn constant_gray_survives_within_dc_step() {
        for quality in [10, 30, 50, 51, 75, 90, 100] {
            let q_dc = f64::from(scaled_table(&LUMA_BASE, quality).unwrap()[0]);
            for g in [0.0, 37.0, 127.0, 128.0, 129.0, 200.0, 255.0] {
                let img = ImageBuffer::filled(13, 11, 3, g).unwrap();
                let out = jpeg_roundtrip(&img, quality).unwrap();
                let first = out.samples()[0];
                for &v in out.samples() {
                    assert!((v - first).abs() < 1e-9, "output must stay constant");
                    assert!((v - g).abs() <= q_dc / 16.0 + 1e-9);
                }
                if quality >= 75 || g == 128.0 {
                    assert!(out.samples().iter().all(|&v| (v - g).abs() < 1.0));
                }
            }
        }
    }

    #[test]
    fn grayscale_input_keeps_one_channel() {
        let img = ImageBuffer::from_fn(20, 12, 1, |x, y, _| (x * 10 + y * 3) as f64).unwrap();
        let out = jpeg_roundtrip(&img, 80).unwrap();
        assert_eq!(out.channels(), 1);
        assert!(psnr(&img, &out).unwrap() > 30.0);
    }
}
