//! Handcrafted feature extractors: co-occurrence matrices and saturation statistics.

use std::io::Write;

use crate::error::{Error, Result};
use crate::image::{rgb_to_ycbcr_planes, ImageBuffer};
use crate::residual::{highpass_residual, Direction};

/// Fixed-length feature vector tagged with the extractor that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub extractor: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(extractor: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            extractor: extractor.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Uniform scalar quantiser onto `levels` bins over `[low, high]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantizer {
    pub levels: usize,
    pub low: f64,
    pub high: f64,
}

impl Quantizer {
    pub fn new(levels: usize, low: f64, high: f64) -> Result<Self> {
        if levels < 2 {
            return Err(Error::invalid("quantizer needs at least 2 levels"));
        }
        if !(low < high) {
            return Err(Error::invalid(format!("degenerate quantizer range [{low}, {high}]")));
        }
        Ok(Self { levels, low, high })
    }

    #[inline]
    pub fn bin(&self, v: f64) -> usize {
        let t = (v.clamp(self.low, self.high) - self.low) / (self.high - self.low);
        ((self.levels as f64 * t).floor() as usize).min(self.levels - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceMatrix {
    pub bins: usize,
    /// `bins × bins`, row = bin of the first sample of the pair.
    pub counts: Vec<u64>,
    pub offset: (isize, isize),
}

impl CooccurrenceMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, a: usize, b: usize) -> u64 {
        self.counts[a * self.bins + b]
    }

    /// Entries divided by the pair count (all zeros for an empty matrix).
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Joint histogram of `(a[p], b[p + offset])` over all pairs inside the raster.
pub fn cooccurrence_between(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
    offset: (isize, isize),
    quantizer: Quantizer,
) -> Result<CooccurrenceMatrix> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::invalid("plane length does not match dimensions"));
    }
    let (dx, dy) = offset;
    if dx.unsigned_abs() >= width || dy.unsigned_abs() >= height {
        return Err(Error::invalid(format!("offset {offset:?} exceeds {width}x{height} raster")));
    }
    let qb = quantizer.levels;
    let mut counts = vec![0u64; qb * qb];
    let (w, h) = (width as isize, height as isize);
    for y in 0.max(-dy)..h.min(h - dy) {
        for x in 0.max(-dx)..w.min(w - dx) {
            let p = (y * w + x) as usize;
            let q = ((y + dy) * w + x + dx) as usize;
            counts[quantizer.bin(a[p]) * qb + quantizer.bin(b[q])] += 1;
        }
    }
    Ok(CooccurrenceMatrix {
        bins: qb,
        counts,
        offset,
    })
}

/// Co-occurrence of a single-channel raster with itself at `offset`.
pub fn cooccurrence(plane: &ImageBuffer, offset: (isize, isize), quantizer: Quantizer) -> Result<CooccurrenceMatrix> {
    if plane.channels() != 1 {
        return Err(Error::invalid("cooccurrence expects a single-channel plane"));
    }
    cooccurrence_between(plane.samples(), plane.samples(), plane.width(), plane.height(), offset, quantizer)
}

pub const RESIDUAL_COOC_TAG: &str = "cooc-residual";
pub const RESIDUAL_COOC_LEN: usize = 300;
/// Residual truncation threshold and quantisation step.
pub const RESIDUAL_TRUNCATION: f64 = 2.0;
pub const RESIDUAL_STEP: f64 = 2.0;

/// Co-occurrences of truncated third-order residuals of Y, Cb and Cr.
///
/// Layout: channel (Y, Cb, Cr) × filter (horizontal, vertical) × offset
/// ((1,0), (0,1)) × 25 cells.
pub fn residual_cooc_features(img: &ImageBuffer) -> Result<FeatureVector> {
    if img.channels() != 3 {
        return Err(Error::invalid("residual co-occurrence features need a 3-channel image"));
    }
    let planes = rgb_to_ycbcr_planes(img)?;
    let t = RESIDUAL_TRUNCATION;
    let quant = Quantizer::new(5, -t - 0.5, t + 0.5)?;
    let mut values = Vec::with_capacity(RESIDUAL_COOC_LEN);
    for plane in planes {
        let plane = ImageBuffer::new(img.width(), img.height(), 1, plane)?;
        for dir in [Direction::Horizontal, Direction::Vertical] {
            let res = highpass_residual(&plane, dir)?;
            let q = res.map_unchecked(|v| (v / RESIDUAL_STEP).round().clamp(-t, t));
            for offset in [(1, 0), (0, 1)] {
                values.extend(cooccurrence(&q, offset, quant)?.normalized());
            }
        }
    }
    Ok(FeatureVector::new(RESIDUAL_COOC_TAG, values))
}

pub const RGB_COOC_TAG: &str = "cooc-rgb";
pub const RGB_COOC_LEN: usize = 384;
pub const RGB_COOC_BINS: usize = 8;

/// Within-band co-occurrences at (1,0) for R, G, B followed by cross-band
/// co-occurrences at (0,0) for (R,G), (G,B), (R,B); 8 intensity bins each.
pub fn rgb_cross_cooc_features(img: &ImageBuffer) -> Result<FeatureVector> {
    if img.channels() != 3 {
        return Err(Error::invalid("RGB co-occurrence features need a 3-channel image"));
    }
    let quant = Quantizer::new(RGB_COOC_BINS, 0.0, 255.0)?;
    let planes = img.planes();
    let (w, h) = (img.width(), img.height());
    let mut values = Vec::with_capacity(RGB_COOC_LEN);
    for p in &planes {
        values.extend(cooccurrence_between(p, p, w, h, (1, 0), quant)?.normalized());
    }
    for (a, b) in [(0, 1), (1, 2), (0, 2)] {
        values.extend(cooccurrence_between(&planes[a], &planes[b], w, h, (0, 0), quant)?.normalized());
    }
    Ok(FeatureVector::new(RGB_COOC_TAG, values))
}

pub const SATURATION_TAG: &str = "saturation";
pub const SATURATION_LEN: usize = 15;

/// Linear-interpolation percentile of sorted data, `p` in `[0, 1]`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(sorted.len() - 1);
    sorted[i0] + (sorted[i1] - sorted[i0]) * (pos - i0 as f64)
}

/// Per channel: fraction ≥ 250, fraction ≤ 5, min/255, max/255, (p90 − p10)/255.
pub fn saturation_features(img: &ImageBuffer) -> Result<FeatureVector> {
    if img.channels() != 3 {
        return Err(Error::invalid("saturation features need a 3-channel image"));
    }
    let mut values = Vec::with_capacity(SATURATION_LEN);
    for mut plane in img.planes() {
        let n = plane.len() as f64;
        let high = plane.iter().filter(|&&v| v >= 250.0).count() as f64 / n;
        let low = plane.iter().filter(|&&v| v <= 5.0).count() as f64 / n;
        plane.sort_by(|a, b| a.total_cmp(b));
        let spread = percentile(&plane, 0.9) - percentile(&plane, 0.1);
        values.extend([high, low, plane[0] / 255.0, plane[plane.len() - 1] / 255.0, spread / 255.0]);
    }
    Ok(FeatureVector::new(SATURATION_TAG, values))
}

/// Write one CSV row per image: `path,label,<extractor>_0,...`.
pub fn write_feature_csv<W: Write>(out: W, rows: &[(String, u8, FeatureVector)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    if let Some((_, _, first)) = rows.first() {
        let mut header = vec!["path".to_string(), "label".to_string()];
        header.extend((0..first.len()).map(|i| format!("{}_{i}", first.extractor)));
        wtr.write_record(&header).map_err(to_err)?;
    }
    for (path, label, fv) in rows {
        let mut rec = vec![path.clone(), label.to_string()];
        rec.extend(fv.values.iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))
}
