use std::f64::consts::PI;

use gandetect::image::ImageBuffer;
use gandetect::rng::Rng;
use gandetect::spectral::{
    average_spectrum, azimuthal_average, fft2d, ifft2d, peak_grid_ratios, spectral_features, SpectralKind,
};
use gandetect::synthgen::{gen_real, generator_stack, GeneratorConfig, Upsampler};
use num_complex::Complex64;
use proptest::prelude::*;

fn random_plane(seed: u64, n: usize) -> ImageBuffer {
    let mut rng = Rng::new(seed);
    ImageBuffer::from_fn(n, n, 1, |_, _, _| rng.uniform_range(-100.0, 300.0)).unwrap()
}

/// Textbook O(N⁴) DFT.
fn naive_dft(img: &ImageBuffer) -> Vec<Complex64> {
    let n = img.width();
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for v in 0..n {
        for u in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let phase = -2.0 * PI * ((u * x + v * y) % n) as f64 / n as f64;
                    acc += img.get(x, y, 0) * Complex64::from_polar(1.0, phase);
                }
            }
            out[v * n + u] = acc;
        }
    }
    out
}

#[test]
fn fft_matches_naive_dft() {
    for seed in 0..10 {
        let img = random_plane(seed, 16);
        let fast = fft2d(&img).unwrap();
        let slow = naive_dft(&img);
        let err = fast
            .coefficients
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "seed {seed}: max error {err}");
    }
}

#[test]
fn parseval_and_inverse() {
    for seed in 0..10 {
        let img = random_plane(100 + seed, 32);
        let spec = fft2d(&img).unwrap();
        let freq: f64 = spec.power().iter().sum();
        let space: f64 = img.samples().iter().map(|v| v * v).sum();
        let n2 = (img.width() * img.height()) as f64;
        assert!((freq - n2 * space).abs() / (n2 * space) < 1e-9);
        let back = ifft2d(&spec).unwrap();
        let err = back
            .samples()
            .iter()
            .zip(img.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9);
    }
}

#[test]
fn radial_bins_cover_every_frequency_once() {
    for n in [4usize, 8, 32, 64] {
        let prof = azimuthal_average(&fft2d(&random_plane(n as u64, n)).unwrap());
        assert_eq!(prof.bins.len(), n / 2);
        assert_eq!(prof.counts.iter().sum::<usize>(), n * n);
        assert!(prof.bins.iter().all(|&b| b >= 0.0));
    }
}

fn spearman(values: &[f64]) -> f64 {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut rank = vec![0.0; n];
    for (r, &i) in idx.iter().enumerate() {
        rank[i] = r as f64;
    }
    let mean = (n - 1) as f64 / 2.0;
    let cov: f64 = (0..n).map(|i| (i as f64 - mean) * (rank[i] - mean)).sum();
    let var: f64 = (0..n).map(|i| (i as f64 - mean).powi(2)).sum();
    cov / var
}

#[test]
fn one_over_f_profile_decreases() {
    for seed in 0..5 {
        let img = gen_real(seed, 64, 1.2).unwrap();
        let luma = gandetect::image::to_luma(&img).unwrap();
        let prof = azimuthal_average(&fft2d(&luma).unwrap());
        let rho = spearman(&prof.bins);
        assert!(rho < -0.9, "seed {seed}: spearman {rho}");
    }
}

fn zero_insertion(kernel: [[f64; 3]; 3]) -> GeneratorConfig {
    GeneratorConfig {
        tag: "zi".into(),
        base_side: 16,
        upsampler: Upsampler::ZeroInsertion,
        kernel,
        stages: 1,
        artifact_gain: 1.0,
    }
}

#[test]
fn zero_insertion_replicates_the_spectrum_exactly() {
    let identity = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
    let plane = generator_stack(4, &zero_insertion(identity), 1.0).unwrap();
    let img = ImageBuffer::new(32, 32, 1, plane).unwrap();
    let f = naive_dft(&img);
    for v in 0..32 {
        for u in 0..32 {
            let a = f[v * 32 + u];
            for (du, dv) in [(16, 0), (0, 16), (16, 16)] {
                let b = f[((v + dv) % 32) * 32 + (u + du) % 32];
                assert!((a - b).norm() < 1e-9 * (1.0 + a.norm()));
            }
        }
    }
}

#[test]
fn zero_insertion_fakes_peak_at_half_band() {
    let kernel = [[0.05, 0.1, 0.05], [0.1, 0.4, 0.1], [0.05, 0.1, 0.05]];
    let mut cfg = zero_insertion(kernel);
    cfg.base_side = 32;
    for seed in 0..5 {
        let img = ImageBuffer::new(64, 64, 1, generator_stack(seed, &cfg, 1.0).unwrap()).unwrap();
        let ratios = peak_grid_ratios(&fft2d(&img).unwrap());
        // centres (N/2,0), (0,N/2), (N/2,N/2) sit at positions 1, 5, 7
        for i in [1, 5, 7] {
            assert!(ratios[i] > 10.0, "seed {seed}: ratios {ratios:?}");
        }
        let fv = spectral_features(&img, SpectralKind::PeakGrid).unwrap();
        assert_eq!(fv.values, ratios);
    }
}

#[test]
fn averaged_fake_spectrum_has_half_band_maxima() {
    let kernel = [[0.05, 0.1, 0.05], [0.1, 0.4, 0.1], [0.05, 0.1, 0.05]];
    let mut cfg = zero_insertion(kernel);
    cfg.base_side = 32;
    let imgs: Vec<ImageBuffer> = (0..100)
        .map(|s| ImageBuffer::new(64, 64, 1, generator_stack(s, &cfg, 1.0).unwrap()).unwrap())
        .collect();
    let view = average_spectrum(&imgs).unwrap();
    // display is centred: frequency (u, v) sits at ((u + 32) % 64, (v + 32) % 64)
    for (x, y) in [(0usize, 32usize), (32, 0), (0, 0)] {
        let centre = view.get(x, y, 0);
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let nx = (x as i64 + dx).rem_euclid(64) as usize;
            let ny = (y as i64 + dy).rem_euclid(64) as usize;
            assert!(centre > view.get(nx, ny, 0), "no maximum at ({x},{y})");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn average_spectrum_ignores_order(seed in any::<u64>(), rot in 0usize..5) {
        let imgs: Vec<ImageBuffer> = (0..5).map(|i| random_plane(seed.wrapping_add(i), 8)).collect();
        let mut rotated = imgs.clone();
        rotated.rotate_left(rot);
        let a = average_spectrum(&imgs).unwrap();
        let b = average_spectrum(&rotated).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_roundtrip_any_plane(seed in any::<u64>(), log_n in 1u32..6) {
        let img = random_plane(seed, 1 << log_n);
        let back = ifft2d(&fft2d(&img).unwrap()).unwrap();
        for (x, y) in back.samples().iter().zip(img.samples()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
