//! The five subcommands, callable without going through the argument parser.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gandetect::image::{center_crop, luma_or_gray, save_image};
use gandetect::manifest::DatasetManifest;
use gandetect::residual::estimate_fingerprint;
use gandetect::spectral::average_spectrum;
use gandetect::synthgen::gen_dataset;
use gandetect::ImageBuffer;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{BenchConfig, DetectorConfig};
use crate::detector::{train_detector, Payload, TrainedDetector};
use crate::error::{BenchError, BenchResult};
use crate::report::{evaluate, load_images, sort_rows, write_csv, Perturbation, SweepRow};

/// Write the configured synthetic corpus; returns the manifest paths in split order.
pub fn cmd_synth(cfg: &BenchConfig) -> BenchResult<Vec<PathBuf>> {
    let spec = cfg
        .dataset
        .synth
        .as_ref()
        .ok_or_else(|| BenchError::usage("configuration has no [dataset.synth] section"))?;
    fs::create_dir_all(&cfg.dataset.dir).map_err(|e| BenchError::io(&cfg.dataset.dir, e))?;
    let manifests = gen_dataset(spec, &cfg.dataset.dir)?;
    Ok(spec
        .splits
        .iter()
        .filter(|s| manifests.contains_key(&s.name))
        .map(|s| cfg.manifest_path(&s.name))
        .collect())
}

/// Manifest of `split`; a missing manifest is a usage error.
pub fn load_split(cfg: &BenchConfig, split: &str) -> BenchResult<DatasetManifest> {
    let path = cfg.manifest_path(split);
    if !path.exists() {
        return Err(BenchError::usage(format!(
            "split {split} not found (no manifest at {})",
            path.display()
        )));
    }
    Ok(DatasetManifest::read(&path)?)
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    detector: &'a DetectorConfig,
    train: &'a gandetect::learn::TrainConfig,
}

/// SHA-256 (hex) of the detector and training configuration.
pub fn config_hash(cfg: &BenchConfig, detector: &DetectorConfig) -> BenchResult<String> {
    let text = toml::to_string(&HashedConfig {
        detector,
        train: &cfg.train,
    })
    .map_err(|e| BenchError::usage(format!("cannot serialise configuration: {e}")))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

pub fn sidecar_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".txt");
    PathBuf::from(name)
}

/// Train detector `id` on the training split; returns the model path.
pub fn cmd_train(cfg: &BenchConfig, id: &str, out: Option<&Path>) -> BenchResult<PathBuf> {
    let det = cfg.detector(id)?;
    let manifest = load_split(cfg, &cfg.dataset.train_split)?;
    let trained = train_detector(det, &manifest, &cfg.train)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.model_path(id));
    trained.detector.save(&path)?;

    let mut side = String::new();
    let _ = writeln!(side, "detector = {}", det.name);
    let _ = writeln!(side, "id = {id}");
    if let Payload::Cnn(p) = &trained.detector.payload {
        let _ = writeln!(side, "variant = {}", p.variant);
        let _ = writeln!(side, "side = {}", p.side);
    }
    let _ = writeln!(side, "seed = {}", cfg.train.seed);
    let _ = writeln!(side, "n_train = {}", trained.n_train);
    let _ = writeln!(side, "config_hash = {}", config_hash(cfg, det)?);
    match trained.final_loss {
        Some(l) => {
            let _ = writeln!(side, "final_loss = {l}");
        }
        None => {
            let _ = writeln!(side, "final_loss = none");
        }
    }
    let sidecar = sidecar_path(&path);
    fs::write(&sidecar, side).map_err(|e| BenchError::io(&sidecar, e))?;
    log::info!("trained {id} on {} images -> {}", trained.n_train, path.display());
    Ok(path)
}

fn load_model(cfg: &BenchConfig, id: &str, model: Option<&Path>) -> BenchResult<TrainedDetector> {
    let path = model.map(Path::to_path_buf).unwrap_or_else(|| cfg.model_path(id));
    if !path.exists() {
        return Err(BenchError::usage(format!(
            "no trained model for detector {id} at {}",
            path.display()
        )));
    }
    TrainedDetector::load(&path)
}

fn write_report(path: &Path, rows: &[SweepRow]) -> BenchResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), rows)
}

/// Evaluate detector `id` (or the model at `model`) on `split`; writes a
/// one-row CSV and returns the row with the CSV path.
pub fn cmd_eval(
    cfg: &BenchConfig,
    id: &str,
    model: Option<&Path>,
    split: Option<&str>,
    out: Option<&Path>,
) -> BenchResult<(SweepRow, PathBuf)> {
    let split = split.unwrap_or(&cfg.dataset.test_split);
    let manifest = load_split(cfg, split)?;
    let detector = load_model(cfg, id, model)?;
    let images = load_images(&manifest)?;
    let row = evaluate(&detector, &manifest, &images, Perturbation::None)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("eval").join(format!("{}-{split}.csv", detector.strategy.id)));
    write_report(&path, std::slice::from_ref(&row))?;
    Ok((row, path))
}

/// Every perturbation of the sweep grid, "none" first.
pub fn sweep_grid(cfg: &BenchConfig) -> Vec<Perturbation> {
    std::iter::once(Perturbation::None)
        .chain(cfg.sweep.jpeg_qualities.iter().map(|&q| Perturbation::Jpeg(q)))
        .chain(cfg.sweep.scales.iter().map(|&s| Perturbation::Resize(s)))
        .collect()
}

/// Run all configured detectors over the perturbation grid.
pub fn sweep_rows(cfg: &BenchConfig) -> BenchResult<Vec<SweepRow>> {
    if cfg.detectors.is_empty() {
        return Err(BenchError::usage("no detectors configured"));
    }
    if cfg.sweep.jpeg_qualities.is_empty() || cfg.sweep.scales.is_empty() {
        return Err(BenchError::usage("sweep grids must be non-empty"));
    }
    let models = cfg
        .detectors
        .iter()
        .map(|d| load_model(cfg, &d.id(), None))
        .collect::<BenchResult<Vec<_>>>()?;
    let manifest = load_split(cfg, cfg.sweep_split())?;
    let images = load_images(&manifest)?;
    let grid = sweep_grid(cfg);
    let mut rows = Vec::with_capacity(models.len() * grid.len());
    for model in &models {
        for &p in &grid {
            let row = evaluate(model, &manifest, &images, p)?;
            log::info!("{}", row.summary());
            rows.push(row);
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn cmd_sweep(cfg: &BenchConfig, out: Option<&Path>) -> BenchResult<PathBuf> {
    let rows = sweep_rows(cfg)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("sweep.csv"));
    write_report(&path, &rows)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InspectWhat {
    AvgSpectrum,
    Fingerprint,
}

impl std::str::FromStr for InspectWhat {
    type Err = BenchError;

    fn from_str(s: &str) -> BenchResult<Self> {
        match s {
            "avg-spectrum" => Ok(InspectWhat::AvgSpectrum),
            "fingerprint" => Ok(InspectWhat::Fingerprint),
            other => Err(BenchError::usage(format!(
                "unknown inspection {other} (expected avg-spectrum or fingerprint)"
            ))),
        }
    }
}

impl InspectWhat {
    pub fn tag(self) -> &'static str {
        match self {
            InspectWhat::AvgSpectrum => "avg-spectrum",
            InspectWhat::Fingerprint => "fingerprint",
        }
    }
}

/// Centre-crop every image to the smallest common size, optionally rounded
/// down to a power-of-two square.
fn common_crop(imgs: &[ImageBuffer], pow2_square: bool) -> BenchResult<Vec<ImageBuffer>> {
    let mut w = imgs.iter().map(|i| i.width()).min().unwrap_or(0);
    let mut h = imgs.iter().map(|i| i.height()).min().unwrap_or(0);
    if pow2_square {
        let s = w.min(h);
        let s = if s == 0 { 0 } else { 1 << (usize::BITS - 1 - s.leading_zeros()) };
        (w, h) = (s, s);
    }
    Ok(imgs
        .iter()
        .map(|i| center_crop(i, w, h))
        .collect::<gandetect::Result<Vec<_>>>()?)
}

/// Averaged spectrum or fingerprint of the images tagged `source` in `split`.
pub fn cmd_inspect(
    cfg: &BenchConfig,
    split: Option<&str>,
    source: &str,
    what: InspectWhat,
    out: Option<&Path>,
) -> BenchResult<PathBuf> {
    let split = split.unwrap_or(&cfg.dataset.test_split);
    let manifest = load_split(cfg, split)?;
    let entries: Vec<_> = manifest.entries.iter().filter(|e| e.source == source).collect();
    if entries.is_empty() {
        return Err(BenchError::usage(format!("no images with source {source} in split {split}")));
    }
    let imgs = entries
        .iter()
        .map(|e| manifest.load_entry(e))
        .collect::<gandetect::Result<Vec<_>>>()?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("inspect").join(format!("{source}-{}.pgm", what.tag())));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    match what {
        InspectWhat::AvgSpectrum => {
            let luma: Vec<ImageBuffer> = imgs.iter().map(luma_or_gray).collect();
            let view = average_spectrum(&common_crop(&luma, true)?)?;
            save_image(&view, &path)?;
        }
        InspectWhat::Fingerprint => {
            estimate_fingerprint(&common_crop(&imgs, false)?, source)?.export(&path)?;
        }
    }
    Ok(path)
}
