//! Scoring a manifest under a perturbation and the CSV report format.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use gandetect::degrade::jpeg_roundtrip;
use gandetect::image::resize_bilinear;
use gandetect::manifest::{DatasetManifest, Label};
use gandetect::metrics::{accuracy_at, auc, pd_at_far, ScoreSet};
use gandetect::ImageBuffer;
use rayon::prelude::*;
use serde::Serialize;

use crate::detector::TrainedDetector;
use crate::error::{BenchError, BenchResult};

pub const CSV_HEADER: [&str; 9] = [
    "detector",
    "perturbation",
    "parameter",
    "auc",
    "acc_at_0.5",
    "pd_at_5",
    "pd_at_1",
    "n_pos",
    "n_neg",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    None,
    Jpeg(u32),
    Resize(f64),
}

impl Perturbation {
    pub fn kind(&self) -> &'static str {
        match self {
            Perturbation::None => "none",
            Perturbation::Jpeg(_) => "jpeg",
            Perturbation::Resize(_) => "resize",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Perturbation::None => 0,
            Perturbation::Jpeg(_) => 1,
            Perturbation::Resize(_) => 2,
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            Perturbation::None => None,
            Perturbation::Jpeg(q) => Some(q as f64),
            Perturbation::Resize(s) => Some(s),
        }
    }

    pub fn apply(&self, img: &ImageBuffer) -> BenchResult<ImageBuffer> {
        Ok(match *self {
            Perturbation::None => img.clone(),
            Perturbation::Jpeg(q) => jpeg_roundtrip(img, q)?,
            Perturbation::Resize(s) => resize_bilinear(img, s)?,
        })
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank()).then_with(|| {
            let (a, b) = (self.parameter().unwrap_or(0.0), other.parameter().unwrap_or(0.0));
            a.total_cmp(&b)
        })
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parameter() {
            Some(p) => write!(f, "{}={p}", self.kind()),
            None => f.write_str(self.kind()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub detector: String,
    pub perturbation: Perturbation,
    pub auc: f64,
    pub acc_at_half: f64,
    pub pd_at_5: f64,
    pub pd_at_1: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    detector: &'a str,
    perturbation: &'a str,
    parameter: String,
    auc: f64,
    acc: f64,
    pd_at_5: f64,
    pd_at_1: f64,
    n_pos: usize,
    n_neg: usize,
}

impl SweepRow {
    fn csv(&self) -> CsvRow<'_> {
        CsvRow {
            detector: &self.detector,
            perturbation: self.perturbation.kind(),
            parameter: self.perturbation.parameter().map(|p| p.to_string()).unwrap_or_default(),
            auc: self.auc,
            acc: self.acc_at_half,
            pd_at_5: self.pd_at_5,
            pd_at_1: self.pd_at_1,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: auc {:.4} acc {:.4} pd@5% {:.4} pd@1% {:.4} (n_pos {}, n_neg {})",
            self.detector, self.perturbation, self.auc, self.acc_at_half, self.pd_at_5, self.pd_at_1, self.n_pos, self.n_neg
        )
    }
}

/// Metrics of one score vector. Scores are logits, so probability 0.5 is
/// threshold 0.
pub fn metrics_row(detector: &str, perturbation: Perturbation, scores: &ScoreSet) -> BenchResult<SweepRow> {
    Ok(SweepRow {
        detector: detector.to_string(),
        perturbation,
        auc: auc(scores)?,
        acc_at_half: accuracy_at(scores, 0.0)?,
        pd_at_5: pd_at_far(scores, 0.05)?,
        pd_at_1: pd_at_far(scores, 0.01)?,
        n_pos: scores.positives.len(),
        n_neg: scores.negatives.len(),
    })
}

/// Scores of every manifest entry after `perturbation`, in manifest order.
pub fn score_images(
    detector: &TrainedDetector,
    images: &[ImageBuffer],
    perturbation: Perturbation,
) -> BenchResult<Vec<f64>> {
    images
        .par_iter()
        .map(|img| detector.score(&perturbation.apply(img)?))
        .collect()
}

pub fn load_images(manifest: &DatasetManifest) -> BenchResult<Vec<ImageBuffer>> {
    Ok(manifest
        .entries
        .par_iter()
        .map(|e| manifest.load_entry(e))
        .collect::<gandetect::Result<Vec<_>>>()?)
}

pub fn labels(manifest: &DatasetManifest) -> Vec<bool> {
    manifest.entries.iter().map(|e| e.label == Label::Synthetic).collect()
}

pub fn evaluate(
    detector: &TrainedDetector,
    manifest: &DatasetManifest,
    images: &[ImageBuffer],
    perturbation: Perturbation,
) -> BenchResult<SweepRow> {
    if manifest.count(Label::Synthetic) == 0 || manifest.count(Label::Real) == 0 {
        return Err(BenchError::Degenerate("evaluation needs both real and synthetic images".into()));
    }
    let scores = score_images(detector, images, perturbation)?;
    let set = ScoreSet::from_labeled(&scores, &labels(manifest))?;
    metrics_row(&detector.strategy.id, perturbation, &set)
}

/// Sort rows by detector, perturbation and numeric parameter.
pub fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| a.detector.cmp(&b.detector).then_with(|| a.perturbation.cmp_key(&b.perturbation)));
}

pub fn write_csv<W: Write>(out: W, rows: &[SweepRow]) -> BenchResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let csv_err = |e: csv::Error| BenchError::Io(format!("writing report: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        w.serialize(row.csv()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| BenchError::Io(format!("writing report: {e}")))
}

pub fn csv_string(rows: &[SweepRow]) -> BenchResult<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
