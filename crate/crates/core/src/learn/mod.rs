//! Trainable detectors: logistic regression on feature vectors and a tiny
//! from-scratch CNN.

use serde::{Deserialize, Serialize};

use crate::degrade::AugmentPolicy;
use crate::error::{Error, Result};

mod cnn;
mod linear;
mod train;

pub use cnn::{
    cnn_forward, cnn_gradient, CnnGradient, CnnVariant, TinyCnnParams, CNN_MAGIC, CONV_WIDTHS, LAPLACIAN,
};
pub use linear::{linear_loss, predict_linear, train_linear, LinearModel, L2_PENALTY, LINEAR_MAGIC, STD_FLOOR};
pub use train::{patch_score, train_cnn, train_cnn_images, CnnTraining};

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub augment: Option<AugmentPolicy>,
    /// CNN input side, a power of two.
    pub side: usize,
    /// Full-batch iterations for logistic regression.
    pub linear_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            augment: None,
            side: 64,
            linear_steps: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.linear_steps == 0 {
            return Err(Error::invalid("epochs, batch_size and linear_steps must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.side < 8 || !self.side.is_power_of_two() {
            return Err(Error::invalid(format!("side {} is not a power of two >= 8", self.side)));
        }
        if let Some(p) = &self.augment {
            p.validate()?;
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 target, overflow-free.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn check_labels(labels: &[bool], min_per_class: usize) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos < min_per_class || neg < min_per_class {
        return Err(Error::invalid(format!(
            "need at least {min_per_class} examples per class, got {pos} synthetic and {neg} real"
        )));
    }
    Ok(())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::invalid("model payload truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::invalid("model length overflow"))?)?;
        let v: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite model parameter"));
        }
        Ok(v)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::invalid(format!(
                "bad model magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::invalid("trailing bytes after model payload"));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_loss() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((bce_with_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((bce_with_logit(3.0, 0.0) - (1.0 + 3f64.exp()).ln()).abs() < 1e-12);
        assert!(bce_with_logit(-1000.0, 1.0).is_finite());
    }

    #[test]
    fn config_defaults_validate() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.side), (20, 32, 64));
        cfg.validate().unwrap();
        assert!(TrainConfig { side: 48, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..cfg }.validate().is_err());
    }
}
