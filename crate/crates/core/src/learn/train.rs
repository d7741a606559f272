use rayon::prelude::*;

use crate::degrade::apply_policy;
use crate::error::{Error, Result};
use crate::image::{extract_patches, ImageBuffer};
use crate::manifest::{DatasetManifest, Label};
use crate::rng::{derive_seed, Rng};

use super::{check_labels, cnn_forward, cnn_gradient, CnnVariant, TinyCnnParams, TrainConfig};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct CnnTraining {
    pub params: TinyCnnParams,
    /// Mean training loss of each epoch, on the (augmented) samples seen.
    pub epoch_losses: Vec<f64>,
}

/// Train on every entry of `manifest`; images must be `cfg.side` square RGB.
pub fn train_cnn(manifest: &DatasetManifest, variant: CnnVariant, cfg: &TrainConfig) -> Result<CnnTraining> {
    manifest.require_both_labels()?;
    let images = manifest
        .entries
        .par_iter()
        .map(|e| manifest.load_entry(e))
        .collect::<Result<Vec<_>>>()?;
    for (img, e) in images.iter().zip(&manifest.entries) {
        if img.width() != cfg.side || img.height() != cfg.side || img.channels() != 3 {
            return Err(Error::invalid(format!(
                "{}: expected a 3-channel {1}x{1} image",
                manifest.resolve(e).display(),
                cfg.side
            )));
        }
    }
    let labels: Vec<bool> = manifest.entries.iter().map(|e| e.label == Label::Synthetic).collect();
    train_cnn_images(&images, &labels, variant, cfg)
}

/// Mini-batch SGD with momentum over in-memory images.
///
/// Per-sample gradients are computed in parallel and summed in ascending
/// sample order, so the result does not depend on the worker count.
pub fn train_cnn_images(
    images: &[ImageBuffer],
    labels: &[bool],
    variant: CnnVariant,
    cfg: &TrainConfig,
) -> Result<CnnTraining> {
    cfg.validate()?;
    if images.len() != labels.len() {
        return Err(Error::invalid("images and labels differ in length"));
    }
    check_labels(labels, 1)?;
    let root = Rng::new(cfg.seed);
    let mut params = TinyCnnParams::he_uniform(variant, cfg.side, &mut root.split(INIT_STREAM))?;
    let mut velocity = vec![0.0; params.values.len()];
    let policy = cfg.augment.as_ref().filter(|p| !p.is_identity());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = root.split(SHUFFLE_STREAM).split(epoch as u64).permutation(images.len());
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&idx| {
                    let img = match policy {
                        Some(p) => {
                            let mut rng = Rng::new(derive_seed(&[cfg.seed, AUGMENT_STREAM, epoch as u64, idx as u64]));
                            apply_policy(&images[idx], p, &mut rng)?
                        }
                        None => images[idx].clone(),
                    };
                    cnn_gradient(&params, &img, labels[idx])
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut sum = vec![0.0; params.values.len()];
            for g in &grads {
                epoch_loss += g.loss;
                for (s, v) in sum.iter_mut().zip(&g.grad) {
                    *s += v;
                }
            }
            for ((p, v), g) in params.values.iter_mut().zip(&mut velocity).zip(&sum) {
                *v = cfg.momentum * *v + g * scale;
                *p -= cfg.learning_rate * *v;
            }
        }
        let mean = epoch_loss / images.len() as f64;
        log::debug!("{variant} epoch {epoch}: loss {mean:.5}");
        if !mean.is_finite() {
            return Err(Error::Degenerate(format!("training diverged at epoch {epoch}")));
        }
        epoch_losses.push(mean);
    }
    Ok(CnnTraining { params, epoch_losses })
}

/// Mean logit over the patches of `img`; `patch` must equal the model side.
pub fn patch_score(params: &TinyCnnParams, img: &ImageBuffer, patch: usize, stride: usize) -> Result<f64> {
    if patch != params.side {
        return Err(Error::invalid(format!(
            "patch side {patch} differs from the model side {}",
            params.side
        )));
    }
    let patches = extract_patches(img, patch, stride)?;
    let logits = patches.iter().map(|p| cnn_forward(params, p)).collect::<Result<Vec<_>>>()?;
    Ok(logits.iter().sum::<f64>() / logits.len() as f64)
}
