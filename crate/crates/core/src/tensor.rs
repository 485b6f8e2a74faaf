//! Dense row-major `f64` tensors and the numeric kernels the layers are
//! built from.
//!
//! Random draws come from ChaCha8 (`rand_chacha`), seeded through
//! `SeedableRng::seed_from_u64`, with independent streams selected by
//! `set_stream`. Normal variates use the ziggurat sampler of `rand_distr`.
//! Both are specified algorithms with no platform-dependent state, so a
//! seed reproduces the same tensor everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape(
            "shape must have at least one dimension".into(),
        ));
    }
    if let Some(d) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "dimension {d} of {shape:?} is zero"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Tensor of the given shape with every element set to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// ChaCha8 generator for `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64], mean: f64, std: f64) {
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = mean + std * z;
    }
}

/// Deterministic normal draws for `(seed, shape, mean, std)`.
pub fn rng_normal(seed: u64, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "standard deviation must be finite and >= 0, got {std}"
        )));
    }
    if !mean.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mean must be finite, got {mean}"
        )));
    }
    let mut t = Tensor::zeros(shape)?;
    let mut rng = seeded_rng(seed, 0);
    fill_normal(&mut rng, &mut t.data, mean, std);
    Ok(t)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul needs 2-D operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Output length of a 1-D convolution, or `None` when the window does not fit.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || len + 2 * padding < kernel {
        return None;
    }
    Some((len + 2 * padding - kernel) / stride + 1)
}

/// Range of output positions `i` for which `i*stride + j - padding` lands
/// inside `[0, len)`.
#[inline]
fn valid_range(
    j: usize,
    len: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
) -> (usize, usize) {
    // i*stride + j >= padding
    let lo = if j >= padding {
        0
    } else {
        (padding - j).div_ceil(stride)
    };
    // i*stride + j - padding <= len - 1
    let hi = if j > len - 1 + padding {
        0
    } else {
        ((len - 1 + padding - j) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

fn conv_dims(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    if input.shape.len() != 2 || kernels.shape.len() != 3 || bias.shape.len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "conv1d expects input [C_in, L], kernels [C_out, C_in, K], bias [C_out]; got {:?}, {:?}, {:?}",
            input.shape, kernels.shape, bias.shape
        )));
    }
    let (c_in, len) = (input.shape[0], input.shape[1]);
    let (c_out, kc, k) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
    if kc != c_in {
        return Err(Error::ShapeMismatch(format!(
            "conv1d kernels expect {kc} input channels, input has {c_in}"
        )));
    }
    if bias.shape[0] != c_out {
        return Err(Error::ShapeMismatch(format!(
            "conv1d bias has {} entries for {c_out} output channels",
            bias.shape[0]
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("conv1d stride must be >= 1".into()));
    }
    let out_len = conv_output_len(len, k, stride, padding).ok_or_else(|| {
        Error::ShapeMismatch(format!(
            "conv1d kernel {k} does not fit length {len} with padding {padding}"
        ))
    })?;
    Ok((c_in, len, c_out, k, out_len))
}

/// Zero-padded cross-correlation:
/// `out[o][i] = bias[o] + sum_{c,j} in[c][i*stride + j - padding] * kernels[o][c][j]`.
pub fn conv1d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c_in, len, c_out, k, out_len) = conv_dims(input, kernels, bias, stride, padding)?;
    let mut out = vec![0.0; c_out * out_len];
    for o in 0..c_out {
        let orow = &mut out[o * out_len..(o + 1) * out_len];
        orow.fill(bias.data[o]);
        for c in 0..c_in {
            let irow = &input.data[c * len..(c + 1) * len];
            let wrow = &kernels.data[(o * c_in + c) * k..(o * c_in + c + 1) * k];
            for (j, &w) in wrow.iter().enumerate() {
                let (lo, hi) = valid_range(j, len, stride, padding, out_len);
                if lo >= hi {
                    continue;
                }
                let start = lo * stride + j - padding;
                if stride == 1 {
                    let src = &irow[start..start + (hi - lo)];
                    for (d, &s) in orow[lo..hi].iter_mut().zip(src) {
                        *d += w * s;
                    }
                } else {
                    for (n, d) in orow[lo..hi].iter_mut().enumerate() {
                        *d += w * irow[start + n * stride];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, out_len], out)
}

/// Gradients of [`conv1d`] with respect to its input, kernels and bias,
/// given the output cotangent `dout`.
pub fn conv1d_backward(
    input: &Tensor,
    kernels: &Tensor,
    dout: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c_out = kernels.shape.first().copied().unwrap_or(0);
    let bias_probe = Tensor {
        shape: vec![c_out],
        data: Vec::new(),
    };
    let (c_in, len, c_out, k, out_len) = conv_dims(input, kernels, &bias_probe, stride, padding)?;
    if dout.shape != [c_out, out_len] {
        return Err(Error::ShapeMismatch(format!(
            "conv1d output cotangent has shape {:?}, expected [{c_out}, {out_len}]",
            dout.shape
        )));
    }
    let mut dinput = vec![0.0; c_in * len];
    let mut dkernels = vec![0.0; c_out * c_in * k];
    let mut dbias = vec![0.0; c_out];
    for (o, db) in dbias.iter_mut().enumerate() {
        let grow = &dout.data[o * out_len..(o + 1) * out_len];
        *db = grow.iter().sum();
        for c in 0..c_in {
            let irow = &input.data[c * len..(c + 1) * len];
            let drow = &mut dinput[c * len..(c + 1) * len];
            let base = (o * c_in + c) * k;
            for j in 0..k {
                let (lo, hi) = valid_range(j, len, stride, padding, out_len);
                if lo >= hi {
                    continue;
                }
                let w = kernels.data[base + j];
                let start = lo * stride + j - padding;
                let mut acc = 0.0;
                if stride == 1 {
                    let n = hi - lo;
                    for ((g, x), dx) in grow[lo..hi]
                        .iter()
                        .zip(&irow[start..start + n])
                        .zip(drow[start..start + n].iter_mut())
                    {
                        acc += g * x;
                        *dx += g * w;
                    }
                } else {
                    for (n, g) in grow[lo..hi].iter().enumerate() {
                        let p = start + n * stride;
                        acc += g * irow[p];
                        drow[p] += g * w;
                    }
                }
                dkernels[base + j] = acc;
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c_in, len], dinput)?,
        Tensor::from_vec(&[c_out, c_in, k], dkernels)?,
        Tensor::from_vec(&[c_out], dbias)?,
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect(),
    }
}

pub(crate) fn relu_in_place(x: &mut Tensor) {
    for v in x.data.iter_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes entries of `grad` wherever the ReLU output was not positive.
pub(crate) fn relu_mask(grad: &mut Tensor, output: &Tensor) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_slice(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax of an `[m, C]` tensor, `C >= 2`.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.shape.len() != 2 || x.shape[1] < 2 {
        return Err(Error::ShapeMismatch(format!(
            "softmax_rows expects [m, C] with C >= 2, got {:?}",
            x.shape
        )));
    }
    let cols = x.shape[1];
    let mut out = vec![0.0; x.data.len()];
    for (row, orow) in x.data.chunks(cols).zip(out.chunks_mut(cols)) {
        softmax_slice(row, orow);
    }
    Tensor::from_vec(&x.shape, out)
}
