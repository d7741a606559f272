use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::Rng;

use super::{bce_with_logit, put_f64s, sigmoid, ByteReader, MODEL_VERSION};

pub const CNN_MAGIC: &[u8; 4] = b"GDCN";
/// Channel widths: input, conv1, conv2, conv3.
pub const CONV_WIDTHS: [usize; 4] = [3, 16, 32, 64];
/// Fixed high-pass filter of the residual-first variant, applied per channel.
pub const LAPLACIAN: [f64; 9] = [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CnnVariant {
    /// conv1 has stride 2.
    DownFirst,
    /// conv1 has stride 1.
    NoDown,
    /// Fixed Laplacian in front of a stride-1 conv1.
    ResidualFirst,
}

impl CnnVariant {
    pub fn tag(self) -> &'static str {
        match self {
            CnnVariant::DownFirst => "down-first",
            CnnVariant::NoDown => "no-down",
            CnnVariant::ResidualFirst => "residual-first",
        }
    }

    fn code(self) -> u8 {
        match self {
            CnnVariant::DownFirst => 0,
            CnnVariant::NoDown => 1,
            CnnVariant::ResidualFirst => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CnnVariant::DownFirst),
            1 => Some(CnnVariant::NoDown),
            2 => Some(CnnVariant::ResidualFirst),
            _ => None,
        }
    }

    pub fn first_stride(self) -> usize {
        match self {
            CnnVariant::DownFirst => 2,
            CnnVariant::NoDown | CnnVariant::ResidualFirst => 1,
        }
    }
}

impl fmt::Display for CnnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CnnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [CnnVariant::DownFirst, CnnVariant::NoDown, CnnVariant::ResidualFirst]
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown CNN variant {s}")))
    }
}

/// Offsets of each layer's weights and biases in the flat parameter vector,
/// laid out as `[conv1.w, conv1.b, conv2.w, conv2.b, conv3.w, conv3.b, fc.w, fc.b]`.
#[derive(Clone, Copy, Debug)]
struct Layout {
    conv_w: [usize; 3],
    conv_b: [usize; 3],
    fc_w: usize,
    fc_b: usize,
    total: usize,
}

const LAYOUT: Layout = {
    let mut conv_w = [0; 3];
    let mut conv_b = [0; 3];
    let mut off = 0;
    let mut i = 0;
    while i < 3 {
        conv_w[i] = off;
        off += CONV_WIDTHS[i + 1] * CONV_WIDTHS[i] * 9;
        conv_b[i] = off;
        off += CONV_WIDTHS[i + 1];
        i += 1;
    }
    let fc_w = off;
    let fc_b = off + CONV_WIDTHS[3];
    Layout {
        conv_w,
        conv_b,
        fc_w,
        fc_b,
        total: fc_b + 1,
    }
};

/// Parameters of the three-convolution detector for a fixed input side.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyCnnParams {
    pub variant: CnnVariant,
    pub side: usize,
    pub values: Vec<f64>,
}

impl TinyCnnParams {
    pub fn param_count() -> usize {
        LAYOUT.total
    }

    pub fn zeros(variant: CnnVariant, side: usize) -> Result<Self> {
        if side < 8 || !side.is_power_of_two() {
            return Err(Error::invalid(format!("CNN side {side} is not a power of two >= 8")));
        }
        Ok(Self {
            variant,
            side,
            values: vec![0.0; LAYOUT.total],
        })
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn he_uniform(variant: CnnVariant, side: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(variant, side)?;
        for i in 0..3 {
            let fan_in = CONV_WIDTHS[i] * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in &mut p.values[LAYOUT.conv_w[i]..LAYOUT.conv_b[i]] {
                *w = rng.uniform_range(-bound, bound);
            }
        }
        let bound = (6.0 / CONV_WIDTHS[3] as f64).sqrt();
        for w in &mut p.values[LAYOUT.fc_w..LAYOUT.fc_b] {
            *w = rng.uniform_range(-bound, bound);
        }
        Ok(p)
    }

    /// Spatial side of each convolution's output.
    pub fn activation_sides(&self) -> [usize; 3] {
        let s1 = out_side(self.side, self.variant.first_stride());
        let s2 = out_side(s1, 2);
        [s1, s2, out_side(s2, 2)]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CNN_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(self.variant.code());
        out.extend_from_slice(&(self.side as u32).to_le_bytes());
        for w in CONV_WIDTHS {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        put_f64s(&mut out, &self.values);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(CNN_MAGIC)?;
        let code = r.take(1)?[0];
        let variant = CnnVariant::from_code(code).ok_or_else(|| Error::invalid(format!("unknown variant code {code}")))?;
        let side = r.u32()? as usize;
        for w in CONV_WIDTHS {
            if r.u32()? as usize != w {
                return Err(Error::invalid("layer widths differ from this build"));
            }
        }
        let n = r.u64()? as usize;
        if n != LAYOUT.total {
            return Err(Error::invalid(format!("expected {} parameters, found {n}", LAYOUT.total)));
        }
        let values = r.f64s(n)?;
        r.finish()?;
        let mut p = Self::zeros(variant, side)?;
        p.values = values;
        Ok(p)
    }
}

fn out_side(side: usize, stride: usize) -> usize {
    (side - 1) / stride + 1
}

/// `C = A·B + beta·C` with `A` m×k and `B` k×n, either optionally stored
/// transposed; all buffers row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index reached with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold 3×3 zero-padded windows of a `[C][side][side]` tensor into a
/// `(C·9) × out²` matrix.
fn im2col(input: &[f64], channels: usize, side: usize, stride: usize, out: usize) -> Vec<f64> {
    let cols = out * out;
    let mut col = vec![0.0; channels * 9 * cols];
    for c in 0..channels {
        let plane = &input[c * side * side..(c + 1) * side * side];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((c * 9) + ky * 3 + kx) * cols..][..cols];
                for oy in 0..out {
                    let y = (oy * stride + ky) as isize - 1;
                    if y < 0 || y >= side as isize {
                        continue;
                    }
                    let src = &plane[y as usize * side..][..side];
                    let dst = &mut row[oy * out..][..out];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let x = (ox * stride + kx) as isize - 1;
                        if x >= 0 && x < side as isize {
                            *d = src[x as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input tensor.
fn col2im(col: &[f64], channels: usize, side: usize, stride: usize, out: usize) -> Vec<f64> {
    let cols = out * out;
    let mut img = vec![0.0; channels * side * side];
    for c in 0..channels {
        let plane = &mut img[c * side * side..(c + 1) * side * side];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((c * 9) + ky * 3 + kx) * cols..][..cols];
                for oy in 0..out {
                    let y = (oy * stride + ky) as isize - 1;
                    if y < 0 || y >= side as isize {
                        continue;
                    }
                    for ox in 0..out {
                        let x = (ox * stride + kx) as isize - 1;
                        if x >= 0 && x < side as isize {
                            plane[y as usize * side + x as usize] += row[oy * out + ox];
                        }
                    }
                }
            }
        }
    }
    img
}

fn laplacian(input: &[f64], side: usize) -> Vec<f64> {
    let channels = input.len() / (side * side);
    let col = im2col(input, channels, side, 1, side);
    let cols = side * side;
    let mut out = vec![0.0; input.len()];
    for c in 0..channels {
        let dst = &mut out[c * cols..(c + 1) * cols];
        for (k, &w) in LAPLACIAN.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let src = &col[(c * 9 + k) * cols..][..cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

struct ConvCache {
    col: Vec<f64>,
    /// Post-activation output `[C][out][out]`.
    act: Vec<f64>,
}

struct Forward {
    layers: Vec<ConvCache>,
    pooled: Vec<f64>,
    logit: f64,
}

/// Channel-planar input scaled to `[0, 1]`.
fn input_tensor(params: &TinyCnnParams, img: &ImageBuffer) -> Result<Vec<f64>> {
    if img.channels() != 3 || img.width() != params.side || img.height() != params.side {
        return Err(Error::invalid(format!(
            "CNN expects a 3-channel {0}x{0} image, got {1}x{2}x{3}",
            params.side,
            img.width(),
            img.height(),
            img.channels()
        )));
    }
    if params.values.len() != LAYOUT.total {
        return Err(Error::invalid("parameter vector has the wrong length"));
    }
    let n = params.side * params.side;
    let mut x = vec![0.0; 3 * n];
    for (i, px) in img.samples().chunks_exact(3).enumerate() {
        for c in 0..3 {
            x[c * n + i] = px[c] / 255.0;
        }
    }
    if params.variant == CnnVariant::ResidualFirst {
        x = laplacian(&x, params.side);
    }
    Ok(x)
}

fn forward(params: &TinyCnnParams, img: &ImageBuffer) -> Result<Forward> {
    let mut x = input_tensor(params, img)?;
    let mut side = params.side;
    let strides = [params.variant.first_stride(), 2, 2];
    let mut layers = Vec::with_capacity(3);
    for i in 0..3 {
        let (cin, cout) = (CONV_WIDTHS[i], CONV_WIDTHS[i + 1]);
        let out = out_side(side, strides[i]);
        let cols = out * out;
        let col = im2col(&x, cin, side, strides[i], out);
        let mut act = vec![0.0; cout * cols];
        for (co, chunk) in act.chunks_exact_mut(cols).enumerate() {
            chunk.fill(params.values[LAYOUT.conv_b[i] + co]);
        }
        let w = &params.values[LAYOUT.conv_w[i]..LAYOUT.conv_b[i]];
        gemm(cout, cin * 9, cols, w, false, &col, false, 1.0, &mut act);
        act.iter_mut().for_each(|v| *v = v.max(0.0));
        x = act.clone();
        side = out;
        layers.push(ConvCache { col, act });
    }
    let cols = side * side;
    let pooled: Vec<f64> = x.chunks_exact(cols).map(|c| c.iter().sum::<f64>() / cols as f64).collect();
    let fc = &params.values[LAYOUT.fc_w..LAYOUT.fc_b];
    let logit = fc.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f64>() + params.values[LAYOUT.fc_b];
    Ok(Forward { layers, pooled, logit })
}

/// Pre-sigmoid logit of `img` (positive = synthetic).
pub fn cnn_forward(params: &TinyCnnParams, img: &ImageBuffer) -> Result<f64> {
    Ok(forward(params, img)?.logit)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnGradient {
    pub logit: f64,
    pub loss: f64,
    /// Same layout as [`TinyCnnParams::values`]; the fixed high-pass filter
    /// has no entries.
    pub grad: Vec<f64>,
}

/// Exact gradient of binary cross-entropy on the logit.
pub fn cnn_gradient(params: &TinyCnnParams, img: &ImageBuffer, label: bool) -> Result<CnnGradient> {
    let fwd = forward(params, img)?;
    let y = if label { 1.0 } else { 0.0 };
    let dz = sigmoid(fwd.logit) - y;
    let mut grad = vec![0.0; LAYOUT.total];
    for (g, p) in grad[LAYOUT.fc_w..LAYOUT.fc_b].iter_mut().zip(&fwd.pooled) {
        *g = dz * p;
    }
    grad[LAYOUT.fc_b] = dz;

    let sides = params.activation_sides();
    let strides = [params.variant.first_stride(), 2, 2];
    let cols3 = sides[2] * sides[2];
    let fc = &params.values[LAYOUT.fc_w..LAYOUT.fc_b];
    // gradient w.r.t. the post-activation output of the current layer
    let mut d_act: Vec<f64> = fc
        .iter()
        .flat_map(|&w| std::iter::repeat_n(dz * w / cols3 as f64, cols3))
        .collect();
    for i in (0..3).rev() {
        let (cin, cout) = (CONV_WIDTHS[i], CONV_WIDTHS[i + 1]);
        let cols = sides[i] * sides[i];
        let cache = &fwd.layers[i];
        for (d, a) in d_act.iter_mut().zip(&cache.act) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let k = cin * 9;
        gemm(cout, cols, k, &d_act, false, &cache.col, true, 0.0, &mut grad[LAYOUT.conv_w[i]..LAYOUT.conv_b[i]]);
        for (co, chunk) in d_act.chunks_exact(cols).enumerate() {
            grad[LAYOUT.conv_b[i] + co] = chunk.iter().sum();
        }
        if i > 0 {
            let w = &params.values[LAYOUT.conv_w[i]..LAYOUT.conv_b[i]];
            let mut d_col = vec![0.0; k * cols];
            gemm(k, cout, cols, w, true, &d_act, false, 0.0, &mut d_col);
            let in_side = sides[i - 1];
            d_act = col2im(&d_col, cin, in_side, strides[i], sides[i]);
        }
    }
    Ok(CnnGradient {
        logit: fwd.logit,
        loss: bce_with_logit(fwd.logit, y),
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(side: usize, seed: u64) -> ImageBuffer {
        let mut rng = Rng::new(seed);
        ImageBuffer::from_fn(side, side, 3, |_, _, _| rng.uniform_range(0.0, 255.0)).unwrap()
    }

    #[test]
    fn layout_counts() {
        assert_eq!(TinyCnnParams::param_count(), 448 + 4640 + 18496 + 65);
        let p = TinyCnnParams::zeros(CnnVariant::NoDown, 64).unwrap();
        assert_eq!(p.activation_sides(), [64, 32, 16]);
        let p = TinyCnnParams::zeros(CnnVariant::DownFirst, 64).unwrap();
        assert_eq!(p.activation_sides(), [32, 16, 8]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = TinyCnnParams::zeros(CnnVariant::ResidualFirst, 16).unwrap();
        let img = random_image(16, 1);
        assert_eq!(cnn_forward(&p, &img).unwrap(), 0.0);
        let g = cnn_gradient(&p, &img, true).unwrap();
        assert_eq!(g.grad[LAYOUT.fc_b], -0.5);
        assert_eq!(g.grad.len(), TinyCnnParams::param_count());
    }

    #[test]
    fn shape_checks() {
        let p = TinyCnnParams::zeros(CnnVariant::NoDown, 16).unwrap();
        assert!(cnn_forward(&p, &random_image(32, 1)).is_err());
        let gray = ImageBuffer::filled(16, 16, 1, 0.0).unwrap();
        assert!(cnn_forward(&p, &gray).is_err());
        assert!(TinyCnnParams::zeros(CnnVariant::NoDown, 12).is_err());
    }

    #[test]
    fn im2col_adjoint() {
        // <im2col(x), c> = <x, col2im(c)>
        let mut rng = Rng::new(4);
        let (ch, side, stride) = (2, 7, 2);
        let out = out_side(side, stride);
        let x: Vec<f64> = (0..ch * side * side).map(|_| rng.normal()).collect();
        let c: Vec<f64> = (0..ch * 9 * out * out).map(|_| rng.normal()).collect();
        let lhs: f64 = im2col(&x, ch, side, stride, out).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&c, ch, side, stride, out)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn laplacian_kills_constants_inside() {
        let side = 8;
        let x = vec![0.5; 3 * side * side];
        let y = laplacian(&x, side);
        assert_eq!(y[side + 1], 0.0);
        assert_eq!(y[0], 1.0);
    }

    #[test]
    fn bytes_roundtrip_and_determinism() {
        let p = TinyCnnParams::he_uniform(CnnVariant::NoDown, 16, &mut Rng::new(2)).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"GDCN");
        assert_eq!(bytes[8], 1);
        assert_eq!(TinyCnnParams::from_bytes(&bytes).unwrap(), p);
        assert!(TinyCnnParams::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let img = random_image(16, 3);
        assert_eq!(cnn_forward(&p, &img).unwrap(), cnn_forward(&p, &img.clone()).unwrap());
        assert_eq!("no-down".parse::<CnnVariant>().unwrap(), CnnVariant::NoDown);
        assert!("resnet".parse::<CnnVariant>().is_err());
    }
}
