//! Deterministic synthetic corpus: 1/f "real" images and upsampling-stack
//! "synthetic" images whose artifacts have a controllable strength.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{encode_pnm, resize_bilinear, ImageBuffer};
use crate::manifest::{DatasetManifest, Label, ManifestEntry};
use crate::rng::{derive_seed, hash_str, Rng};
use crate::spectral::{fft2d, ifft2d, Spectrum};

pub const TARGET_MEAN: f64 = 128.0;
pub const TARGET_STD: f64 = 40.0;
pub const MAX_TINT: f64 = 8.0;
pub const REAL_SOURCE: &str = "real";
/// Extra centre weight of the default kernels.
pub const DEFAULT_IMBALANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Upsampler {
    ZeroInsertion,
    Nearest,
    Bilinear,
}

/// One synthetic generator identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub tag: String,
    pub base_side: usize,
    pub upsampler: Upsampler,
    /// Applied after every upsampling stage, zero-padded; row-major.
    pub kernel: [[f64; 3]; 3],
    pub stages: u32,
    pub artifact_gain: f64,
}

impl GeneratorConfig {
    pub fn side(&self) -> usize {
        self.base_side << self.stages
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.artifact_gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tag.is_empty() || self.tag == REAL_SOURCE || self.tag.contains(['\t', '\n', '/']) {
            return Err(Error::invalid(format!("invalid generator tag {:?}", self.tag)));
        }
        if !(1..=2).contains(&self.stages) {
            return Err(Error::invalid(format!("{}: stages must be 1 or 2", self.tag)));
        }
        if self.base_side < 2 || !self.side().is_power_of_two() {
            return Err(Error::invalid(format!(
                "{}: output side {} is not a power of two",
                self.tag,
                self.side()
            )));
        }
        if !(0.0..=1.0).contains(&self.artifact_gain) {
            return Err(Error::invalid(format!(
                "{}: artifact_gain {} outside [0, 1]",
                self.tag, self.artifact_gain
            )));
        }
        if self.kernel.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{}: non-finite kernel", self.tag)));
        }
        Ok(())
    }

    /// Default training-side generator: one zero-insertion stage followed by
    /// the bilinear interpolation kernel with a heavier centre tap.
    ///
    /// After zero insertion each output pixel sees one of four kernel phases.
    /// Bilinear weights give every phase the same total, so interpolation
    /// alone leaves no period-2 trace; the extra centre weight breaks that
    /// balance and imprints the half-band peaks.
    pub fn default_a(side: usize) -> Self {
        Self {
            tag: "gen-a".into(),
            base_side: side / 2,
            upsampler: Upsampler::ZeroInsertion,
            kernel: [[0.25, 0.5, 0.25], [0.5, 1.0 + DEFAULT_IMBALANCE, 0.5], [0.25, 0.5, 0.25]],
            stages: 1,
            artifact_gain: 0.8,
        }
    }

    /// Default held-out generator: two zero-insertion stages with a
    /// nearest-neighbour style 2×2 box kernel, unbalanced the same way.
    pub fn default_b(side: usize) -> Self {
        Self {
            tag: "gen-b".into(),
            base_side: side / 4,
            upsampler: Upsampler::ZeroInsertion,
            kernel: [[0.0, 0.0, 0.0], [0.0, 1.0 + DEFAULT_IMBALANCE, 1.0], [0.0, 1.0, 1.0]],
            stages: 2,
            artifact_gain: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub name: String,
    pub real: usize,
    pub fake: usize,
    /// Tags of the generators used for this split's fakes, cycled by index.
    pub generators: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub side: usize,
    pub alpha_range: [f64; 2],
    pub generators: Vec<GeneratorConfig>,
    pub splits: Vec<SplitSpec>,
}

impl SynthSpec {
    /// 1000+1000 training images from `gen-a`, 500+500 test images from the
    /// unseen `gen-b`, 64×64.
    pub fn default_benchmark(seed: u64) -> Self {
        Self {
            seed,
            side: 64,
            alpha_range: [0.8, 1.6],
            generators: vec![GeneratorConfig::default_a(64), GeneratorConfig::default_b(64)],
            splits: vec![
                SplitSpec {
                    name: "train".into(),
                    real: 1000,
                    fake: 1000,
                    generators: vec!["gen-a".into()],
                },
                SplitSpec {
                    name: "test".into(),
                    real: 500,
                    fake: 500,
                    generators: vec!["gen-b".into()],
                },
            ],
        }
    }

    pub fn generator(&self, tag: &str) -> Option<&GeneratorConfig> {
        self.generators.iter().find(|g| g.tag == tag)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.side.is_power_of_two() || self.side < 8 {
            return Err(Error::invalid(format!("side {} is not a power of two >= 8", self.side)));
        }
        let [lo, hi] = self.alpha_range;
        if !(0.5 <= lo && lo <= hi && hi <= 2.0) {
            return Err(Error::invalid(format!("alpha range [{lo}, {hi}] not within [0.5, 2]")));
        }
        for g in &self.generators {
            g.validate()?;
            if g.side() != self.side {
                return Err(Error::invalid(format!(
                    "{}: output side {} differs from dataset side {}",
                    g.tag,
                    g.side(),
                    self.side
                )));
            }
        }
        let mut names = std::collections::HashSet::new();
        for s in &self.splits {
            if s.name.is_empty() || s.name.contains(['/', '\t', '\n']) || !names.insert(&s.name) {
                return Err(Error::invalid(format!("invalid or duplicate split name {:?}", s.name)));
            }
            if s.real == 0 || s.fake == 0 {
                return Err(Error::invalid(format!("split {}: counts must be >= 1", s.name)));
            }
            if s.generators.is_empty() {
                return Err(Error::invalid(format!("split {}: no generators", s.name)));
            }
            if let Some(t) = s.generators.iter().find(|t| self.generator(t).is_none()) {
                return Err(Error::invalid(format!("split {}: unknown generator {t}", s.name)));
            }
        }
        if self.splits.is_empty() {
            return Err(Error::invalid("no splits"));
        }
        Ok(())
    }
}

fn check_texture_args(side: usize, alpha: f64) -> Result<()> {
    if side < 2 || !side.is_power_of_two() {
        return Err(Error::invalid(format!("side {side} is not a power of two")));
    }
    if !(0.5..=2.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0.5, 2]")));
    }
    Ok(())
}

/// Zero-mean 1/f^alpha texture: white noise shaped in the frequency domain.
///
/// The spectrum of real white noise already has i.i.d. complex Gaussian
/// coefficients with Hermitian symmetry, so shaping it keeps the result real.
fn one_over_f(rng: &mut Rng, side: usize, alpha: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..side * side).map(|_| rng.normal()).collect();
    let img = ImageBuffer::new(side, side, 1, noise).expect("finite noise");
    let spec = fft2d(&img).expect("square power-of-two");
    let signed = |k: usize| if k <= side / 2 { k as f64 } else { k as f64 - side as f64 };
    let mut coefficients = spec.coefficients;
    for v in 0..side {
        for u in 0..side {
            let r = signed(u).hypot(signed(v));
            let c = &mut coefficients[v * side + u];
            *c = if r == 0.0 { Complex64::new(0.0, 0.0) } else { *c / r.powf(alpha) };
        }
    }
    let shaped = Spectrum {
        width: side,
        height: side,
        coefficients,
        provenance: None,
    };
    ifft2d(&shaped).expect("finite spectrum").into_samples()
}

/// Affine map to the given mean and standard deviation; constant input maps
/// to the mean.
fn normalize(values: &[f64], mean: f64, std: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let s = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    let k = if s > 0.0 { std / s } else { 0.0 };
    values.iter().map(|v| mean + (v - m) * k).collect()
}

/// Replicate a luma plane into three channels with seeded tints, clamped.
fn tinted_rgb(luma: &[f64], side: usize, rng: &mut Rng) -> ImageBuffer {
    let tint: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(-MAX_TINT, MAX_TINT));
    ImageBuffer::from_fn(side, side, 3, |x, y, c| {
        (luma[y * side + x] + tint[c]).clamp(0.0, 255.0)
    })
    .expect("finite samples")
}

/// "Real" image: normalised 1/f^alpha texture with per-channel tints.
pub fn gen_real(seed: u64, side: usize, alpha: f64) -> Result<ImageBuffer> {
    check_texture_args(side, alpha)?;
    let rng = Rng::new(seed);
    let tex = one_over_f(&mut rng.split(0), side, alpha);
    let luma = normalize(&tex, TARGET_MEAN, TARGET_STD);
    Ok(tinted_rgb(&luma, side, &mut rng.split(1)))
}

fn upsample(plane: &[f64], side: usize, method: Upsampler) -> Vec<f64> {
    let out_side = 2 * side;
    match method {
        Upsampler::ZeroInsertion => {
            let mut out = vec![0.0; out_side * out_side];
            for y in 0..side {
                for x in 0..side {
                    out[2 * y * out_side + 2 * x] = plane[y * side + x];
                }
            }
            out
        }
        Upsampler::Nearest => (0..out_side * out_side)
            .map(|i| plane[(i / out_side / 2) * side + (i % out_side) / 2])
            .collect(),
        Upsampler::Bilinear => {
            let img = ImageBuffer::new(side, side, 1, plane.to_vec()).expect("finite plane");
            resize_bilinear(&img, 2.0).expect("valid scale").into_samples()
        }
    }
}

/// 3×3 convolution with zero padding.
pub fn convolve3x3(plane: &[f64], side: usize, kernel: &[[f64; 3]; 3]) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for (ky, row) in kernel.iter().enumerate() {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= side as isize {
                    continue;
                }
                for (kx, &k) in row.iter().enumerate() {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= side as isize {
                        continue;
                    }
                    acc += k * plane[sy as usize * side + sx as usize];
                }
            }
            out[y * side + x] = acc;
        }
    }
    out
}

/// The generator stack before blending: base texture normalised like a real
/// image, then `stages` rounds of upsampling followed by the post-kernel.
pub fn generator_stack(seed: u64, config: &GeneratorConfig, alpha: f64) -> Result<Vec<f64>> {
    config.validate()?;
    check_texture_args(config.base_side, alpha)?;
    let mut rng = Rng::new(seed).split(2);
    let tex = one_over_f(&mut rng, config.base_side, alpha);
    let mut plane: Vec<f64> = normalize(&tex, TARGET_MEAN, TARGET_STD)
        .into_iter()
        .map(|v| v.clamp(0.0, 255.0))
        .collect();
    let mut side = config.base_side;
    for _ in 0..config.stages {
        plane = upsample(&plane, side, config.upsampler);
        side *= 2;
        plane = convolve3x3(&plane, side, &config.kernel);
    }
    Ok(plane)
}

/// "Synthetic" image from `config`, with 1/f^alpha textures at both scales.
pub fn gen_fake(seed: u64, config: &GeneratorConfig, alpha: f64) -> Result<ImageBuffer> {
    let generated = normalize(&generator_stack(seed, config, alpha)?, 0.0, 1.0);
    let side = config.side();
    check_texture_args(side, alpha)?;
    let rng = Rng::new(seed);
    let background = normalize(&one_over_f(&mut rng.split(0), side, alpha), 0.0, 1.0);
    let g = config.artifact_gain;
    let blend: Vec<f64> = generated
        .iter()
        .zip(&background)
        .map(|(a, b)| g * a + (1.0 - g) * b)
        .collect();
    let luma = normalize(&blend, TARGET_MEAN, TARGET_STD);
    Ok(tinted_rgb(&luma, side, &mut rng.split(1)))
}

/// Seed of image `index` of `class` in `split`.
pub fn image_seed(master: u64, split: &str, label: Label, index: usize) -> u64 {
    derive_seed(&[master, hash_str(split), label.as_u8() as u64, index as u64])
}

struct Job<'a> {
    rel: PathBuf,
    label: Label,
    seed: u64,
    generator: Option<&'a GeneratorConfig>,
}

/// Write every split of `spec` under `outdir`.
///
/// Images go to `<split>/<real|fake>/<index>.ppm`; each split's manifest is
/// `<split>.tsv` with paths relative to `outdir`.
pub fn gen_dataset(spec: &SynthSpec, outdir: &Path) -> Result<BTreeMap<String, DatasetManifest>> {
    spec.validate()?;
    let mut manifests = BTreeMap::new();
    for split in &spec.splits {
        let mut jobs = Vec::with_capacity(split.real + split.fake);
        for (label, count, dir) in [(Label::Real, split.real, "real"), (Label::Synthetic, split.fake, "fake")] {
            let dir_path = outdir.join(&split.name).join(dir);
            fs::create_dir_all(&dir_path).map_err(|e| Error::io(&dir_path, e))?;
            for i in 0..count {
                let generator = match label {
                    Label::Real => None,
                    Label::Synthetic => spec.generator(&split.generators[i % split.generators.len()]),
                };
                jobs.push(Job {
                    rel: PathBuf::from(&split.name).join(dir).join(format!("{i:05}.ppm")),
                    label,
                    seed: image_seed(spec.seed, &split.name, label, i),
                    generator,
                });
            }
        }
        let entries = jobs
            .par_iter()
            .map(|job| {
                let mut rng = Rng::new(job.seed).split(3);
                let alpha = rng.uniform_range(spec.alpha_range[0], spec.alpha_range[1]);
                let img = match job.generator {
                    None => gen_real(job.seed, spec.side, alpha)?,
                    Some(g) => gen_fake(job.seed, g, alpha)?,
                };
                let path = outdir.join(&job.rel);
                fs::write(&path, encode_pnm(&img)?).map_err(|e| Error::io(&path, e))?;
                Ok(ManifestEntry {
                    path: job.rel.clone(),
                    label: job.label,
                    source: job.generator.map_or(REAL_SOURCE, |g| g.tag.as_str()).to_string(),
                    seed: Some(job.seed),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = DatasetManifest::new(entries, outdir)?;
        manifest.write(outdir.join(format!("{}.tsv", split.name)))?;
        manifests.insert(split.name.clone(), manifest);
    }
    Ok(manifests)
}
