use gandetect::image::ImageBuffer;
use gandetect::learn::{bce_with_logit, cnn_forward, cnn_gradient, CnnVariant, TinyCnnParams, CONV_WIDTHS};
use gandetect::rng::Rng;

const STEP: f64 = 1e-5;
/// Absolute scale below which a derivative counts as zero for the relative test.
const GRAD_FLOOR: f64 = 1e-7;

fn random_image(seed: u64, side: usize) -> ImageBuffer {
    let mut rng = Rng::new(seed);
    ImageBuffer::from_fn(side, side, 3, |_, _, _| rng.uniform_range(0.0, 255.0)).unwrap()
}

/// `[start, end)` of every parameter block in layout order.
fn blocks() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut off = 0;
    for i in 0..3 {
        let w = CONV_WIDTHS[i + 1] * CONV_WIDTHS[i] * 9;
        out.push((off, off + w));
        out.push((off + w, off + w + CONV_WIDTHS[i + 1]));
        off += w + CONV_WIDTHS[i + 1];
    }
    out.push((off, off + CONV_WIDTHS[3]));
    out.push((off + CONV_WIDTHS[3], off + CONV_WIDTHS[3] + 1));
    out
}

fn loss(params: &TinyCnnParams, img: &ImageBuffer, label: bool) -> f64 {
    bce_with_logit(cnn_forward(params, img).unwrap(), if label { 1.0 } else { 0.0 })
}

fn check_variant(variant: CnnVariant, seed: u64) {
    let mut rng = Rng::new(seed);
    let mut params = TinyCnnParams::he_uniform(variant, 16, &mut rng).unwrap();
    // non-zero biases so bias gradients pass through active units
    for (s, e) in blocks().into_iter().skip(1).step_by(2) {
        for b in &mut params.values[s..e] {
            *b = rng.uniform_range(-0.1, 0.1);
        }
    }
    let img = random_image(seed + 1, 16);
    let label = seed % 2 == 0;
    let analytic = cnn_gradient(&params, &img, label).unwrap();
    assert_eq!(analytic.grad.len(), TinyCnnParams::param_count());

    // five parameters from each of the 8 blocks (the final bias block has one)
    let mut picked = Vec::new();
    for (s, e) in blocks() {
        for _ in 0..5.min(e - s) {
            picked.push(s + rng.int_range(0, (e - s - 1) as i64) as usize);
        }
    }
    assert!(picked.len() >= 30);
    for &i in &picked {
        let mut plus = params.clone();
        plus.values[i] += STEP;
        let mut minus = params.clone();
        minus.values[i] -= STEP;
        let numeric = (loss(&plus, &img, label) - loss(&minus, &img, label)) / (2.0 * STEP);
        let a = analytic.grad[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        assert!(rel < 1e-4, "{variant} param {i}: analytic {a}, numeric {numeric}, rel {rel}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    for variant in [CnnVariant::DownFirst, CnnVariant::NoDown, CnnVariant::ResidualFirst] {
        for seed in [3, 8] {
            check_variant(variant, seed);
        }
    }
}

#[test]
fn zero_network_bias_gradient() {
    let p = TinyCnnParams::zeros(CnnVariant::NoDown, 16).unwrap();
    let g = cnn_gradient(&p, &random_image(1, 16), true).unwrap();
    assert_eq!(g.logit, 0.0);
    assert_eq!(*g.grad.last().unwrap(), -0.5);
    let g = cnn_gradient(&p, &random_image(1, 16), false).unwrap();
    assert_eq!(*g.grad.last().unwrap(), 0.5);
}

#[test]
fn no_down_activation_shapes_at_64() {
    let p = TinyCnnParams::zeros(CnnVariant::NoDown, 64).unwrap();
    assert_eq!(p.activation_sides(), [64, 32, 16]);
    let p = TinyCnnParams::zeros(CnnVariant::DownFirst, 64).unwrap();
    assert_eq!(p.activation_sides(), [32, 16, 8]);
    assert_eq!(CONV_WIDTHS, [3, 16, 32, 64]);
}
