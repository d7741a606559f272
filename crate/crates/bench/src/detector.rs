//! Detector roster: training, per-detector test strategy and model files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use gandetect::degrade::{apply_policy, AugmentPolicy};
use gandetect::features::{residual_cooc_features, rgb_cross_cooc_features, saturation_features};
use gandetect::image::{center_crop, luma_or_gray, resize_bilinear};
use gandetect::learn::{
    cnn_forward, linear_loss, patch_score, predict_linear, train_cnn_images, train_linear, CnnVariant, LinearModel,
    TinyCnnParams, TrainConfig,
};
use gandetect::manifest::{DatasetManifest, Label};
use gandetect::residual::{denoise_residual, estimate_fingerprint, ncc, Fingerprint};
use gandetect::rng::{derive_seed, Rng};
use gandetect::spectral::{resample_profile, spectral_features, SpectralKind};
use gandetect::{FeatureVector, ImageBuffer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DetectorConfig, DEFAULT_PATCH};
use crate::error::{BenchError, BenchResult};

pub const MODEL_MAGIC: &[u8; 4] = b"GDBM";
pub const MODEL_VERSION: u32 = 1;
/// Floor applied before taking logs of spectral features.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    SpecRadial,
    SpecPeaks,
    CoocResidual,
    CoocRgb,
    Saturation,
    Fingerprint,
    CnnDown,
    CnnNodown,
    CnnResidual,
    CnnPatch,
}

pub const ALL_KINDS: [DetectorKind; 10] = [
    DetectorKind::SpecRadial,
    DetectorKind::SpecPeaks,
    DetectorKind::CoocResidual,
    DetectorKind::CoocRgb,
    DetectorKind::Saturation,
    DetectorKind::Fingerprint,
    DetectorKind::CnnDown,
    DetectorKind::CnnNodown,
    DetectorKind::CnnResidual,
    DetectorKind::CnnPatch,
];

impl DetectorKind {
    pub fn tag(self) -> &'static str {
        match self {
            DetectorKind::SpecRadial => "spec-radial",
            DetectorKind::SpecPeaks => "spec-peaks",
            DetectorKind::CoocResidual => "cooc-residual",
            DetectorKind::CoocRgb => "cooc-rgb",
            DetectorKind::Saturation => "saturation",
            DetectorKind::Fingerprint => "fingerprint",
            DetectorKind::CnnDown => "cnn-down",
            DetectorKind::CnnNodown => "cnn-nodown",
            DetectorKind::CnnResidual => "cnn-residual",
            DetectorKind::CnnPatch => "cnn-patch",
        }
    }

    fn code(self) -> u8 {
        ALL_KINDS.iter().position(|&k| k == self).expect("listed kind") as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        ALL_KINDS.get(c as usize).copied()
    }

    pub fn cnn_variant(self) -> Option<CnnVariant> {
        match self {
            DetectorKind::CnnDown => Some(CnnVariant::DownFirst),
            DetectorKind::CnnNodown | DetectorKind::CnnPatch => Some(CnnVariant::NoDown),
            DetectorKind::CnnResidual => Some(CnnVariant::ResidualFirst),
            _ => None,
        }
    }

    pub fn is_spectral(self) -> bool {
        matches!(self, DetectorKind::SpecRadial | DetectorKind::SpecPeaks)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DetectorKind {
    type Err = BenchError;

    fn from_str(s: &str) -> BenchResult<Self> {
        ALL_KINDS
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| BenchError::usage(format!("unknown detector {s}")))
    }
}

/// Test-time conventions of one detector, fixed at training time.
#[derive(Clone, Debug, PartialEq)]
pub struct Strategy {
    pub kind: DetectorKind,
    pub id: String,
    /// Spectral crop side; CNN input side; patch side for `cnn-patch`.
    pub side: usize,
    pub stride: usize,
}

impl Strategy {
    pub fn resolve(cfg: &DetectorConfig, train: &TrainConfig) -> Self {
        let side = match cfg.name {
            DetectorKind::SpecRadial | DetectorKind::SpecPeaks => cfg.spectral_side.unwrap_or(train.side),
            DetectorKind::CnnPatch => cfg.patch.unwrap_or(DEFAULT_PATCH),
            DetectorKind::CnnDown | DetectorKind::CnnNodown | DetectorKind::CnnResidual => train.side,
            _ => 0,
        };
        let stride = match cfg.name {
            DetectorKind::CnnPatch => cfg.stride.unwrap_or((side / 2).max(1)),
            _ => 0,
        };
        Self {
            kind: cfg.name,
            id: cfg.id(),
            side,
            stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Linear(LinearModel),
    Cnn(TinyCnnParams),
    /// Fake-source fingerprints and the decision offset subtracted from the
    /// best correlation.
    Fingerprint { fingerprints: Vec<Fingerprint>, offset: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedDetector {
    pub strategy: Strategy,
    pub payload: Payload,
}

/// Largest power of two not above `n`.
fn pow2_floor(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}

/// Spectral test strategy: luma, centre crop to the largest power-of-two
/// square not exceeding `side` or the image, log of the features.
fn spectral_vector(img: &ImageBuffer, kind: DetectorKind, side: usize) -> BenchResult<FeatureVector> {
    let luma = luma_or_gray(img);
    let s = pow2_floor(side.min(luma.width()).min(luma.height()));
    if s < 4 {
        return Err(BenchError::usage(format!(
            "image {}x{} too small for spectral analysis",
            img.width(),
            img.height()
        )));
    }
    let crop = center_crop(&luma, s, s)?;
    let spectral = if kind == DetectorKind::SpecRadial {
        SpectralKind::Radial
    } else {
        SpectralKind::PeakGrid
    };
    let mut fv = spectral_features(&crop, spectral)?;
    if spectral == SpectralKind::Radial && fv.len() != side / 2 {
        fv.values = resample_profile(&fv.values, side / 2);
    }
    fv.values.iter_mut().for_each(|v| *v = v.max(LOG_FLOOR).ln());
    Ok(fv)
}

fn feature_vector(img: &ImageBuffer, strategy: &Strategy) -> BenchResult<FeatureVector> {
    Ok(match strategy.kind {
        DetectorKind::SpecRadial | DetectorKind::SpecPeaks => spectral_vector(img, strategy.kind, strategy.side)?,
        DetectorKind::CoocResidual => residual_cooc_features(img)?,
        DetectorKind::CoocRgb => rgb_cross_cooc_features(img)?,
        DetectorKind::Saturation => saturation_features(img)?,
        other => return Err(BenchError::usage(format!("{other} is not a feature detector"))),
    })
}

/// CNN test strategy: bilinear upscale when shorter than `side`, then
/// centre crop to `side`.
pub fn fit_to_side(img: &ImageBuffer, side: usize) -> BenchResult<ImageBuffer> {
    let short = img.width().min(img.height());
    let img = if short < side {
        let scale = side as f64 / short as f64;
        let up = resize_bilinear(img, scale)?;
        if up.width().min(up.height()) < side {
            resize_bilinear(img, (side as f64 + 0.5) / short as f64)?
        } else {
            up
        }
    } else {
        img.clone()
    };
    Ok(center_crop(&img, side, side)?)
}

/// Correlation of two rasters after centre-cropping both to their common size.
fn cropped_ncc(a: &[f64], aw: usize, ah: usize, b: &[f64], bw: usize, bh: usize) -> f64 {
    let (w, h) = (aw.min(bw), ah.min(bh));
    let cut = |v: &[f64], vw: usize, vh: usize| -> Vec<f64> {
        let (x0, y0) = ((vw - w) / 2, (vh - h) / 2);
        (0..h).flat_map(|y| v[(y0 + y) * vw + x0..][..w].to_vec()).collect()
    };
    ncc(&cut(a, aw, ah), &cut(b, bw, bh))
}

fn best_fingerprint_corr(img: &ImageBuffer, fps: &[Fingerprint]) -> BenchResult<f64> {
    let res = denoise_residual(&luma_or_gray(img))?;
    Ok(fps
        .iter()
        .map(|fp| cropped_ncc(res.samples(), res.width(), res.height(), &fp.values, fp.width, fp.height))
        .fold(f64::NEG_INFINITY, f64::max))
}

impl TrainedDetector {
    /// Logit-like score of one image (positive = synthetic).
    pub fn score(&self, img: &ImageBuffer) -> BenchResult<f64> {
        let s = &self.strategy;
        match &self.payload {
            Payload::Linear(m) => Ok(predict_linear(m, &feature_vector(img, s)?)?),
            Payload::Cnn(p) => {
                if s.kind == DetectorKind::CnnPatch {
                    let img = if img.width().min(img.height()) < s.side {
                        fit_to_side(img, s.side)?
                    } else {
                        img.clone()
                    };
                    Ok(patch_score(p, &img, s.side, s.stride)?)
                } else {
                    Ok(cnn_forward(p, &fit_to_side(img, s.side)?)?)
                }
            }
            Payload::Fingerprint { fingerprints, offset } => Ok(best_fingerprint_corr(img, fingerprints)? - offset),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.strategy;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(s.kind.code());
        put_str(&mut out, &s.id);
        out.extend_from_slice(&(s.side as u32).to_le_bytes());
        out.extend_from_slice(&(s.stride as u32).to_le_bytes());
        match &self.payload {
            Payload::Linear(m) => put_blob(&mut out, &m.to_bytes()),
            Payload::Cnn(p) => put_blob(&mut out, &p.to_bytes()),
            Payload::Fingerprint { fingerprints, offset } => {
                out.extend_from_slice(&offset.to_le_bytes());
                out.extend_from_slice(&(fingerprints.len() as u32).to_le_bytes());
                for fp in fingerprints {
                    put_str(&mut out, &fp.source);
                    out.extend_from_slice(&(fp.width as u32).to_le_bytes());
                    out.extend_from_slice(&(fp.height as u32).to_le_bytes());
                    out.extend_from_slice(&(fp.count as u64).to_le_bytes());
                    for v in &fp.values {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> BenchResult<Self> {
        let bad = |m: &str| BenchError::usage(format!("malformed model file: {m}"));
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated"))? != MODEL_MAGIC {
            return Err(bad("wrong magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated"))?;
        if version != MODEL_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let code = r.take(1).ok_or_else(|| bad("truncated"))?[0];
        let kind = DetectorKind::from_code(code).ok_or_else(|| bad("unknown detector code"))?;
        let id = r.string().ok_or_else(|| bad("bad id"))?;
        let side = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let stride = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let strategy = Strategy { kind, id, side, stride };
        let payload = match kind {
            DetectorKind::Fingerprint => {
                let offset = r.f64().ok_or_else(|| bad("truncated"))?;
                let n = r.u32().ok_or_else(|| bad("truncated"))? as usize;
                let mut fingerprints = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    let source = r.string().ok_or_else(|| bad("bad source tag"))?;
                    let width = r.u32().ok_or_else(|| bad("truncated"))? as usize;
                    let height = r.u32().ok_or_else(|| bad("truncated"))? as usize;
                    let count = r.u64().ok_or_else(|| bad("truncated"))? as usize;
                    let len = width.checked_mul(height).ok_or_else(|| bad("size overflow"))?;
                    let values = (0..len).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(|| bad("truncated"))?;
                    fingerprints.push(Fingerprint {
                        width,
                        height,
                        values,
                        count,
                        source,
                    });
                }
                Payload::Fingerprint { fingerprints, offset }
            }
            k if k.cnn_variant().is_some() => {
                Payload::Cnn(TinyCnnParams::from_bytes(r.blob().ok_or_else(|| bad("truncated"))?)?)
            }
            _ => Payload::Linear(LinearModel::from_bytes(r.blob().ok_or_else(|| bad("truncated"))?)?),
        };
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { strategy, payload })
    }

    pub fn save(&self, path: &Path) -> BenchResult<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| BenchError::io(path, e))
    }

    pub fn load(path: &Path) -> BenchResult<Self> {
        let bytes = fs::read(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_blob(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len())?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?)).filter(|v| v.is_finite())
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }

    fn blob(&mut self) -> Option<&'a [u8]> {
        let n = usize::try_from(self.u64()?).ok()?;
        self.take(n)
    }
}

/// Outcome of training one detector.
#[derive(Clone, Debug)]
pub struct Trained {
    pub detector: TrainedDetector,
    /// Final training loss; absent for fingerprint detectors.
    pub final_loss: Option<f64>,
    pub n_train: usize,
}

const FEATURE_AUGMENT_STREAM: u64 = 11;

fn load_all(manifest: &DatasetManifest) -> BenchResult<Vec<ImageBuffer>> {
    Ok(manifest
        .entries
        .par_iter()
        .map(|e| manifest.load_entry(e))
        .collect::<gandetect::Result<Vec<_>>>()?)
}

/// Train the detector described by `cfg` on every entry of `manifest`.
pub fn train_detector(cfg: &DetectorConfig, manifest: &DatasetManifest, train: &TrainConfig) -> BenchResult<Trained> {
    let strategy = Strategy::resolve(cfg, train);
    let pos = manifest.count(Label::Synthetic);
    let neg = manifest.count(Label::Real);
    if pos < 2 || neg < 2 {
        return Err(BenchError::Degenerate(format!(
            "training needs at least 2 images per class, found {pos} synthetic and {neg} real"
        )));
    }
    let augment: Option<AugmentPolicy> = match &cfg.augment {
        Some(a) => Some(a.resolve()?),
        None => train.augment.clone(),
    };
    let augment = augment.filter(|p| !p.is_identity());
    let images = load_all(manifest)?;
    let labels: Vec<bool> = manifest.entries.iter().map(|e| e.label == Label::Synthetic).collect();
    let n_train = images.len();
    match strategy.kind {
        DetectorKind::Fingerprint => train_fingerprint(strategy, manifest, &images, &labels),
        kind if kind.cnn_variant().is_some() => {
            let variant = kind.cnn_variant().expect("cnn kind");
            let inputs = images
                .par_iter()
                .map(|img| fit_to_side(img, strategy.side))
                .collect::<BenchResult<Vec<_>>>()?;
            let cfg = TrainConfig {
                side: strategy.side,
                augment,
                ..train.clone()
            };
            let run = train_cnn_images(&inputs, &labels, variant, &cfg)?;
            Ok(Trained {
                final_loss: run.epoch_losses.last().copied(),
                detector: TrainedDetector {
                    strategy,
                    payload: Payload::Cnn(run.params),
                },
                n_train,
            })
        }
        _ => {
            let feats = images
                .par_iter()
                .enumerate()
                .map(|(i, img)| {
                    let img = match &augment {
                        Some(p) => {
                            let mut rng = Rng::new(derive_seed(&[train.seed, FEATURE_AUGMENT_STREAM, i as u64]));
                            apply_policy(img, p, &mut rng)?
                        }
                        None => img.clone(),
                    };
                    feature_vector(&img, &strategy)
                })
                .collect::<BenchResult<Vec<_>>>()?;
            let model = train_linear(&feats, &labels, train)?;
            let loss = linear_loss(&model, &feats, &labels)?;
            Ok(Trained {
                detector: TrainedDetector {
                    strategy,
                    payload: Payload::Linear(model),
                },
                final_loss: Some(loss),
                n_train,
            })
        }
    }
}

fn train_fingerprint(
    strategy: Strategy,
    manifest: &DatasetManifest,
    images: &[ImageBuffer],
    labels: &[bool],
) -> BenchResult<Trained> {
    let mut by_source: BTreeMap<&str, Vec<ImageBuffer>> = BTreeMap::new();
    for (e, img) in manifest.entries.iter().zip(images) {
        if e.label == Label::Synthetic {
            by_source.entry(e.source.as_str()).or_default().push(img.clone());
        }
    }
    let mut fingerprints = Vec::new();
    for (source, imgs) in by_source {
        let w = imgs.iter().map(|i| i.width()).min().expect("non-empty group");
        let h = imgs.iter().map(|i| i.height()).min().expect("non-empty group");
        let cropped = imgs.iter().map(|i| center_crop(i, w, h)).collect::<gandetect::Result<Vec<_>>>()?;
        fingerprints.push(estimate_fingerprint(&cropped, source)?);
    }
    let scores = images
        .par_iter()
        .map(|img| best_fingerprint_corr(img, &fingerprints))
        .collect::<BenchResult<Vec<_>>>()?;
    let mean = |want: bool| {
        let v: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == want).map(|(s, _)| *s).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let offset = 0.5 * (mean(true) + mean(false));
    Ok(Trained {
        detector: TrainedDetector {
            strategy,
            payload: Payload::Fingerprint { fingerprints, offset },
        },
        final_loss: None,
        n_train: images.len(),
    })
}
