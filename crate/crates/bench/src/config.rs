//! Bench configuration file (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use gandetect::degrade::AugmentPolicy;
use gandetect::learn::TrainConfig;
use gandetect::synthgen::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorKind;
use crate::error::{BenchError, BenchResult};

pub const DEFAULT_QUALITIES: [u32; 8] = [100, 90, 80, 70, 60, 50, 40, 30];
pub const DEFAULT_SCALES: [f64; 7] = [0.5, 0.7, 0.9, 1.0, 1.3, 1.6, 2.0];
pub const DEFAULT_PATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Master seed; training runs use it as their seed.
    #[serde(default)]
    pub seed: u64,
    /// Models, reports and inspection images go here.
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub workers: usize,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub detectors: Vec<DetectorConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory holding `<split>.tsv` manifests.
    pub dir: PathBuf,
    #[serde(default = "default_train_split")]
    pub train_split: String,
    #[serde(default = "default_test_split")]
    pub test_split: String,
    /// Synthetic corpus written to `dir` by `synth`.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

fn default_train_split() -> String {
    "train".into()
}

fn default_test_split() -> String {
    "test".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub jpeg_qualities: Vec<u32>,
    pub scales: Vec<f64>,
    /// Split to perturb; the dataset's test split when absent.
    pub split: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            jpeg_qualities: DEFAULT_QUALITIES.to_vec(),
            scales: DEFAULT_SCALES.to_vec(),
            split: None,
        }
    }
}

/// Augmentation given either as a preset name or as an explicit policy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AugmentSetting {
    Preset(String),
    Policy(AugmentPolicy),
}

impl AugmentSetting {
    pub fn resolve(&self) -> BenchResult<AugmentPolicy> {
        match self {
            AugmentSetting::Preset(name) => AugmentPolicy::preset(name)
                .ok_or_else(|| BenchError::usage(format!("unknown augmentation preset {name}"))),
            AugmentSetting::Policy(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub name: DetectorKind,
    /// Unique identifier used for model files and report rows; the name when absent.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub augment: Option<AugmentSetting>,
    /// Power-of-two crop side for spectral detectors; the training side when absent.
    #[serde(default)]
    pub spectral_side: Option<usize>,
    #[serde(default)]
    pub patch: Option<usize>,
    #[serde(default)]
    pub stride: Option<usize>,
}

impl DetectorConfig {
    pub fn new(name: DetectorKind) -> Self {
        Self {
            name,
            id: None,
            augment: None,
            spectral_side: None,
            patch: None,
            stride: None,
        }
    }

    pub fn id(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.name.tag().to_string())
    }
}

impl BenchConfig {
    /// Parse TOML, resolving relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> BenchResult<Self> {
        let mut cfg: BenchConfig =
            toml::from_str(text).map_err(|e| BenchError::usage(format!("invalid configuration: {e}")))?;
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        if cfg.dataset.dir.is_relative() {
            cfg.dataset.dir = base.join(&cfg.dataset.dir);
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> BenchResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Replace the master seed (and the synthetic corpus seed).
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        if let Some(s) = &mut self.dataset.synth {
            s.seed = seed;
        }
    }

    pub fn validate(&self) -> BenchResult<()> {
        self.train.validate()?;
        if let Some(s) = &self.dataset.synth {
            s.validate()?;
        }
        let mut ids = std::collections::HashSet::new();
        for d in &self.detectors {
            let id = d.id();
            if id.is_empty() || id.contains(['/', '\\', '\t', '\n', ',']) {
                return Err(BenchError::usage(format!("invalid detector id {id:?}")));
            }
            if !ids.insert(id.clone()) {
                return Err(BenchError::usage(format!("duplicate detector id {id}")));
            }
            if let Some(a) = &d.augment {
                a.resolve()?;
            }
            if let Some(s) = d.spectral_side {
                if s < 8 || !s.is_power_of_two() {
                    return Err(BenchError::usage(format!("{id}: spectral_side {s} is not a power of two >= 8")));
                }
            }
            if let Some(p) = d.patch {
                if p < 8 || !p.is_power_of_two() {
                    return Err(BenchError::usage(format!("{id}: patch {p} is not a power of two >= 8")));
                }
            }
            if d.stride == Some(0) {
                return Err(BenchError::usage(format!("{id}: stride must be positive")));
            }
        }
        if self.sweep.jpeg_qualities.iter().any(|q| !(1..=100).contains(q)) {
            return Err(BenchError::usage("sweep qualities must lie in 1..=100"));
        }
        if self.sweep.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(BenchError::usage("sweep scales must be positive"));
        }
        Ok(())
    }

    pub fn detector(&self, id: &str) -> BenchResult<&DetectorConfig> {
        self.detectors
            .iter()
            .find(|d| d.id() == id)
            .ok_or_else(|| BenchError::usage(format!("unknown detector {id}")))
    }

    pub fn manifest_path(&self, split: &str) -> PathBuf {
        self.dataset.dir.join(format!("{split}.tsv"))
    }

    pub fn model_path(&self, id: &str) -> PathBuf {
        self.out_dir.join("models").join(format!("{id}.model"))
    }

    pub fn sweep_split(&self) -> &str {
        self.sweep.split.as_deref().unwrap_or(&self.dataset.test_split)
    }
}
