//! Detection metrics over real-valued scores (higher = more likely synthetic).

use std::io::Write;

use crate::error::{Error, Result};

/// Scores of synthetic (positive) and real (negative) images.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl ScoreSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Result<Self> {
        let s = Self { positives, negatives };
        s.check()?;
        Ok(s)
    }

    /// Split `(score, is_positive)` pairs into classes.
    pub fn from_labeled(scores: &[f64], labels: &[bool]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid("scores and labels differ in length"));
        }
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (&s, &l) in scores.iter().zip(labels) {
            if l {
                pos.push(s)
            } else {
                neg.push(s)
            }
        }
        Self::new(pos, neg)
    }

    fn check(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::invalid("both score classes must be non-empty"));
        }
        if self.positives.iter().chain(&self.negatives).any(|v| !v.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(())
    }

    /// The same scores with the class roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            positives: self.negatives.clone(),
            negatives: self.positives.clone(),
        }
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Mann–Whitney AUC with ties counted one half.
///
/// Computed exactly: twice the statistic is accumulated as an integer.
pub fn auc(s: &ScoreSet) -> Result<f64> {
    s.check()?;
    let neg = sorted(&s.negatives);
    let mut twice_u: u128 = 0;
    for &p in &s.positives {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = 2 * s.positives.len() as u128 * s.negatives.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

/// Fraction of positives strictly above `threshold` plus negatives at or below it.
pub fn accuracy_at(s: &ScoreSet, threshold: f64) -> Result<f64> {
    s.check()?;
    let tp = s.positives.iter().filter(|&&v| v > threshold).count();
    let tn = s.negatives.iter().filter(|&&v| v <= threshold).count();
    Ok((tp + tn) as f64 / (s.positives.len() + s.negatives.len()) as f64)
}

/// Conservative threshold for a false-alarm rate: the smallest negative score
/// `t` with `#{neg > t} / |N| ≤ far`.
pub fn far_threshold(negatives: &[f64], far: f64) -> f64 {
    let neg = sorted(negatives);
    let n = neg.len();
    let allowed = (far * n as f64 + 1e-9).floor() as usize;
    // count above t is non-increasing in t; the largest score always qualifies
    *neg.iter()
        .find(|&&t| n - neg.partition_point(|&v| v <= t) <= allowed)
        .expect("non-empty negatives")
}

/// Probability of detection at false-alarm rate `far` in `(0, 1)`.
pub fn pd_at_far(s: &ScoreSet, far: f64) -> Result<f64> {
    s.check()?;
    if !(far > 0.0 && far < 1.0) {
        return Err(Error::invalid(format!("false-alarm rate must be in (0,1), got {far}")));
    }
    let needed = (1.0 / far).ceil() as usize;
    if s.negatives.len() < needed {
        log::warn!(
            "only {} negatives for a {far} false-alarm rate (>= {needed} recommended)",
            s.negatives.len()
        );
    }
    let t = far_threshold(&s.negatives, far);
    Ok(s.positives.iter().filter(|&&v| v > t).count() as f64 / s.positives.len() as f64)
}

/// `(FAR, Pd)` points for every distinct score used as an inclusive threshold,
/// bracketed by `+∞` (0,0) and `−∞` (1,1).
pub fn roc_curve(s: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    s.check()?;
    let mut thresholds: Vec<f64> = s.positives.iter().chain(&s.negatives).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = sorted(&s.positives);
    let neg = sorted(&s.negatives);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = pos.len() - pos.partition_point(|&v| v < t);
        let fp = neg.len() - neg.partition_point(|&v| v < t);
        pts.push((fp as f64 / nn, tp as f64 / np));
    }
    pts.push((1.0, 1.0));
    Ok(pts)
}

/// Trapezoidal area under a curve of `(x, y)` points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

pub fn write_roc_csv<W: Write>(out: W, points: &[(f64, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    wtr.write_record(["far", "pd"]).map_err(err)?;
    for (far, pd) in points {
        wtr.write_record([far.to_string(), pd.to_string()]).map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))
}
