//! Forensic toolkit for telling generated images apart from camera-like ones.
//!
//! The crate is organised by processing stage:
//!
//! * [`image`]: the [`ImageBuffer`] raster, PPM/PGM I/O, cropping, resizing, patches.
//! * [`manifest`]: tab-separated dataset manifests.
//! * [`degrade`]: JPEG simulation, blur, noise, cut-out and augmentation policies.
//! * [`spectral`]: radix-2 FFT, spectra visualisation and spectral features.
//! * [`residual`]: noise residuals, generator fingerprints and attribution.
//! * [`features`]: co-occurrence and saturation feature extractors.
//! * [`learn`]: logistic regression and a tiny from-scratch CNN.
//! * [`metrics`]: AUC, accuracy, probability of detection at a fixed false-alarm rate.
//! * [`synthgen`]: deterministic synthetic corpus with controllable upsampling artifacts.

pub mod degrade;
pub mod error;
pub mod features;
pub mod image;
pub mod learn;
pub mod manifest;
pub mod metrics;
pub mod residual;
pub mod rng;
pub mod spectral;
pub mod synthgen;

pub use error::{Error, Result};
pub use features::FeatureVector;
pub use image::ImageBuffer;
pub use rng::Rng;
