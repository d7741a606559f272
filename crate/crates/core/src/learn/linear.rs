use crate::error::{Error, Result};
use crate::features::FeatureVector;

use super::{bce_with_logit, check_labels, put_f64s, sigmoid, ByteReader, TrainConfig, MODEL_VERSION};

pub const LINEAR_MAGIC: &[u8; 4] = b"GDLM";
pub const STD_FLOOR: f64 = 1e-8;
/// Coefficient of the squared weight norm added to the mean loss.
pub const L2_PENALTY: f64 = 1e-4;

/// Logistic regression on standardised features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub extractor: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearModel {
    fn check(&self, feat: &FeatureVector) -> Result<()> {
        if feat.extractor != self.extractor {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.extractor, feat.extractor
            )));
        }
        if feat.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "model expects {} values, got {}",
                self.weights.len(),
                feat.len()
            )));
        }
        Ok(())
    }

    fn standardize_into(&self, values: &[f64], out: &mut [f64]) {
        for (o, ((v, m), s)) in out.iter_mut().zip(values.iter().zip(&self.mean).zip(&self.scale)) {
            *o = (v - m) / s;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(LINEAR_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.extractor.len() as u32).to_le_bytes());
        out.extend_from_slice(self.extractor.as_bytes());
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        put_f64s(&mut out, &self.weights);
        put_f64s(&mut out, &[self.bias]);
        put_f64s(&mut out, &self.mean);
        put_f64s(&mut out, &self.scale);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(LINEAR_MAGIC)?;
        let tag_len = r.u32()? as usize;
        let extractor = String::from_utf8(r.take(tag_len)?.to_vec())
            .map_err(|_| Error::invalid("extractor tag is not UTF-8"))?;
        let d = r.u64()? as usize;
        let weights = r.f64s(d)?;
        let bias = r.f64s(1)?[0];
        let mean = r.f64s(d)?;
        let scale = r.f64s(d)?;
        r.finish()?;
        if scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("non-positive feature scale"));
        }
        Ok(Self {
            extractor,
            weights,
            bias,
            mean,
            scale,
        })
    }
}

fn validate_features(features: &[FeatureVector]) -> Result<(String, usize)> {
    let first = features.first().ok_or_else(|| Error::invalid("no training features"))?;
    let d = first.len();
    if d == 0 {
        return Err(Error::invalid("empty feature vectors"));
    }
    for f in features {
        if f.extractor != first.extractor || f.len() != d {
            return Err(Error::invalid(format!(
                "mixed features: {}[{}] vs {}[{}]",
                first.extractor,
                d,
                f.extractor,
                f.len()
            )));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
    }
    Ok((first.extractor.clone(), d))
}

/// Largest eigenvalue of `XᵀX / n` by power iteration from the all-ones vector.
fn gram_top_eigenvalue(x: &[Vec<f64>], d: usize) -> f64 {
    let n = x.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut w = vec![0.0; d];
        for row in x {
            let p: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (wi, ri) in w.iter_mut().zip(row) {
                *wi += p * ri / n;
            }
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-9 * norm;
        lambda = norm;
        v = w.into_iter().map(|a| a / norm).collect();
        if converged {
            break;
        }
    }
    lambda
}

/// Fit logistic regression by full-batch gradient descent with momentum.
///
/// The step size is the inverse of the loss's curvature bound
/// `λmax(XᵀX/n)/4 + 2·L2`, so the iteration is stable for any feature scale;
/// `cfg.linear_steps` and `cfg.momentum` control the optimiser.
pub fn train_linear(features: &[FeatureVector], labels: &[bool], cfg: &TrainConfig) -> Result<LinearModel> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    check_labels(labels, 2)?;
    let (extractor, d) = validate_features(features)?;
    let n = features.len();
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v / nf;
        }
    }
    let mut scale = vec![0.0; d];
    for f in features {
        for ((s, v), m) in scale.iter_mut().zip(&f.values).zip(&mean) {
            *s += (v - m).powi(2) / nf;
        }
    }
    for s in &mut scale {
        *s = s.sqrt().max(STD_FLOOR);
    }
    let mut model = LinearModel {
        extractor,
        weights: vec![0.0; d],
        bias: 0.0,
        mean,
        scale,
    };
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let mut row = vec![0.0; d];
            model.standardize_into(&f.values, &mut row);
            row
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    // the bias direction has curvature at most 1/4
    let curvature = 0.25 * gram_top_eigenvalue(&x, d).max(1.0) + 2.0 * L2_PENALTY;
    let step = 1.0 / curvature;
    let mut vel_w = vec![0.0; d];
    let mut vel_b = 0.0;
    let mut grad_w = vec![0.0; d];
    for _ in 0..cfg.linear_steps {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, &t) in x.iter().zip(&y) {
            let z: f64 = row.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>() + model.bias;
            let r = (sigmoid(z) - t) / nf;
            for (g, a) in grad_w.iter_mut().zip(row) {
                *g += r * a;
            }
            grad_b += r;
        }
        for ((v, g), w) in vel_w.iter_mut().zip(&grad_w).zip(&mut model.weights) {
            *v = cfg.momentum * *v + g + 2.0 * L2_PENALTY * *w;
            *w -= step * *v;
        }
        vel_b = cfg.momentum * vel_b + grad_b;
        model.bias -= step * vel_b;
    }
    Ok(model)
}

/// Logit `w·standardize(feat) + b`.
pub fn predict_linear(model: &LinearModel, feat: &FeatureVector) -> Result<f64> {
    model.check(feat)?;
    let mut row = vec![0.0; feat.len()];
    model.standardize_into(&feat.values, &mut row);
    Ok(row.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>() + model.bias)
}

/// Regularised mean cross-entropy of `model` on a labelled set.
pub fn linear_loss(model: &LinearModel, features: &[FeatureVector], labels: &[bool]) -> Result<f64> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invalid("features and labels must be non-empty and equal in length"));
    }
    let mut total = 0.0;
    for (f, &l) in features.iter().zip(labels) {
        total += bce_with_logit(predict_linear(model, f)?, if l { 1.0 } else { 0.0 });
    }
    let l2: f64 = model.weights.iter().map(|w| w * w).sum();
    Ok(total / features.len() as f64 + L2_PENALTY * l2)
}
