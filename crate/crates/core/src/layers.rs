//! Differentiable building blocks: convolution + ReLU, the residual basic
//! block, pooling, flattening and dense layers. Each forward returns the
//! intermediates its backward needs.

use crate::error::{Error, Result};
use crate::tensor::{conv1d, conv1d_backward, relu_in_place, relu_mask, Tensor};

/// How a basic block routes its input around the residual branch.
#[derive(Debug, Clone, Copy)]
pub enum Shortcut<'a> {
    /// No skip path at all (plain sequential block).
    None,
    Identity,
    /// 1x1 convolution carrying the block's stride.
    Projection {
        weight: &'a Tensor,
        bias: &'a Tensor,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct BlockParams<'a> {
    pub conv_a_weight: &'a Tensor,
    pub conv_a_bias: &'a Tensor,
    pub conv_b_weight: &'a Tensor,
    pub conv_b_bias: &'a Tensor,
    pub shortcut: Shortcut<'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub conv_a_weight: Tensor,
    pub conv_a_bias: Tensor,
    pub conv_b_weight: Tensor,
    pub conv_b_bias: Tensor,
    /// `(weight, bias)` gradients of a projection shortcut.
    pub shortcut: Option<(Tensor, Tensor)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShortcutKind {
    None,
    Identity,
    Projection,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Tensor,
    hidden: Tensor,
    output: Tensor,
    stride: usize,
    shortcut: ShortcutKind,
    param_shapes: [Vec<usize>; 2],
}

impl BlockCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

fn same_padding(kernel: &Tensor) -> usize {
    kernel.shape()[2] / 2
}

/// `y = relu(conv_b(relu(conv_a(x))) + shortcut(x))`.
pub fn basic_block_forward(
    x: &Tensor,
    params: &BlockParams<'_>,
    stride: usize,
) -> Result<(Tensor, BlockCache)> {
    if !(stride == 1 || stride == 2) {
        return Err(Error::InvalidParameter(format!(
            "basic block stride must be 1 or 2, got {stride}"
        )));
    }
    let mut hidden = conv1d(
        x,
        params.conv_a_weight,
        params.conv_a_bias,
        stride,
        same_padding(params.conv_a_weight),
    )?;
    relu_in_place(&mut hidden);
    let mut out = conv1d(
        &hidden,
        params.conv_b_weight,
        params.conv_b_bias,
        1,
        same_padding(params.conv_b_weight),
    )?;
    let kind = match params.shortcut {
        Shortcut::None => ShortcutKind::None,
        Shortcut::Identity => {
            if x.shape() != out.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "identity shortcut needs matching shapes, input {:?} vs branch {:?}",
                    x.shape(),
                    out.shape()
                )));
            }
            for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                *o += v;
            }
            ShortcutKind::Identity
        }
        Shortcut::Projection { weight, bias } => {
            let proj = conv1d(x, weight, bias, stride, 0)?;
            if proj.shape() != out.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "projection shortcut output {:?} does not match branch {:?}",
                    proj.shape(),
                    out.shape()
                )));
            }
            for (o, &v) in out.data_mut().iter_mut().zip(proj.data()) {
                *o += v;
            }
            ShortcutKind::Projection
        }
    };
    relu_in_place(&mut out);
    let cache = BlockCache {
        input: x.clone(),
        hidden,
        output: out.clone(),
        stride,
        shortcut: kind,
        param_shapes: [
            params.conv_a_weight.shape().to_vec(),
            params.conv_b_weight.shape().to_vec(),
        ],
    };
    Ok((out, cache))
}

/// Reverse pass of [`basic_block_forward`]. The skip path and the residual
/// branch both contribute to the input gradient.
pub fn basic_block_backward(
    dy: &Tensor,
    cache: &BlockCache,
    params: &BlockParams<'_>,
) -> Result<(Tensor, BlockGrads)> {
    let kind = match params.shortcut {
        Shortcut::None => ShortcutKind::None,
        Shortcut::Identity => ShortcutKind::Identity,
        Shortcut::Projection { .. } => ShortcutKind::Projection,
    };
    if kind != cache.shortcut
        || params.conv_a_weight.shape() != cache.param_shapes[0].as_slice()
        || params.conv_b_weight.shape() != cache.param_shapes[1].as_slice()
    {
        return Err(Error::CacheMismatch(
            "block parameters differ from those used in the forward pass".into(),
        ));
    }
    if dy.shape() != cache.output.shape() {
        return Err(Error::CacheMismatch(format!(
            "cotangent shape {:?} differs from block output {:?}",
            dy.shape(),
            cache.output.shape()
        )));
    }
    let mut dsum = dy.clone();
    relu_mask(&mut dsum, &cache.output);

    let (mut dhidden, dwb, dbb) = conv1d_backward(
        &cache.hidden,
        params.conv_b_weight,
        &dsum,
        1,
        same_padding(params.conv_b_weight),
    )?;
    relu_mask(&mut dhidden, &cache.hidden);
    let (mut dx, dwa, dba) = conv1d_backward(
        &cache.input,
        params.conv_a_weight,
        &dhidden,
        cache.stride,
        same_padding(params.conv_a_weight),
    )?;

    let shortcut = match params.shortcut {
        Shortcut::None => None,
        Shortcut::Identity => {
            for (d, &g) in dx.data_mut().iter_mut().zip(dsum.data()) {
                *d += g;
            }
            None
        }
        Shortcut::Projection { weight, .. } => {
            let (dxs, dws, dbs) = conv1d_backward(&cache.input, weight, &dsum, cache.stride, 0)?;
            for (d, &g) in dx.data_mut().iter_mut().zip(dxs.data()) {
                *d += g;
            }
            Some((dws, dbs))
        }
    };
    Ok((
        dx,
        BlockGrads {
            conv_a_weight: dwa,
            conv_a_bias: dba,
            conv_b_weight: dwb,
            conv_b_bias: dbb,
            shortcut,
        },
    ))
}

/// Convolution followed by ReLU. Returns the activated output, which is
/// also what the backward pass needs for the ReLU mask.
pub fn conv_relu_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let mut y = conv1d(x, weight, bias, stride, padding)?;
    relu_in_place(&mut y);
    Ok(y)
}

/// Gradients `(dx, dweight, dbias)` of [`conv_relu_forward`].
pub fn conv_relu_backward(
    dy: &Tensor,
    x: &Tensor,
    y: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    if dy.shape() != y.shape() {
        return Err(Error::CacheMismatch(format!(
            "cotangent shape {:?} differs from layer output {:?}",
            dy.shape(),
            y.shape()
        )));
    }
    let mut dz = dy.clone();
    relu_mask(&mut dz, y);
    conv1d_backward(x, weight, &dz, stride, padding)
}

/// `y = W x + b` for `x: [in]`, `W: [out, in]`, optionally followed by ReLU.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, relu: bool) -> Result<Tensor> {
    let (out_dim, in_dim) = match weight.shape() {
        [o, i] => (*o, *i),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "dense weight must be [out, in], got {s:?}"
            )))
        }
    };
    if x.len() != in_dim || bias.shape() != [out_dim] {
        return Err(Error::ShapeMismatch(format!(
            "dense layer [{out_dim}, {in_dim}] got input of {} values and bias {:?}",
            x.len(),
            bias.shape()
        )));
    }
    let mut y = bias.clone();
    for (o, yo) in y.data_mut().iter_mut().enumerate() {
        let wrow = &weight.data()[o * in_dim..(o + 1) * in_dim];
        *yo += wrow.iter().zip(x.data()).map(|(w, v)| w * v).sum::<f64>();
    }
    if relu {
        relu_in_place(&mut y);
    }
    Ok(y)
}

/// Gradients `(dx, dweight, dbias)` of [`dense_forward`].
pub fn dense_backward(
    dy: &Tensor,
    x: &Tensor,
    y: &Tensor,
    weight: &Tensor,
    relu: bool,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if dy.len() != out_dim || x.len() != in_dim {
        return Err(Error::CacheMismatch(format!(
            "dense backward: cotangent of {} values, input of {}, weight {:?}",
            dy.len(),
            x.len(),
            weight.shape()
        )));
    }
    let mut dz = dy.clone();
    if relu {
        relu_mask(&mut dz, y);
    }
    let mut dx = vec![0.0; in_dim];
    let mut dw = vec![0.0; out_dim * in_dim];
    for (o, &g) in dz.data().iter().enumerate() {
        let wrow = &weight.data()[o * in_dim..(o + 1) * in_dim];
        let dwrow = &mut dw[o * in_dim..(o + 1) * in_dim];
        for ((d, &w), (dwv, &v)) in dx.iter_mut().zip(wrow).zip(dwrow.iter_mut().zip(x.data())) {
            *d += g * w;
            *dwv = g * v;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(&[out_dim, in_dim], dw)?,
        dz.reshape(&[out_dim])?,
    ))
}

/// Non-overlapping average pooling over windows of `size`; a trailing
/// partial window is dropped.
pub fn avg_pool_forward(x: &Tensor, size: usize) -> Result<Tensor> {
    let (c, len) = signal_dims(x)?;
    let out_len = len / size.max(1);
    if size == 0 || out_len == 0 {
        return Err(Error::ShapeMismatch(format!(
            "cannot average-pool length {len} with window {size}"
        )));
    }
    let inv = 1.0 / size as f64;
    let mut out = vec![0.0; c * out_len];
    for ch in 0..c {
        let row = &x.data()[ch * len..(ch + 1) * len];
        for (i, o) in out[ch * out_len..(ch + 1) * out_len].iter_mut().enumerate() {
            *o = row[i * size..(i + 1) * size].iter().sum::<f64>() * inv;
        }
    }
    Tensor::from_vec(&[c, out_len], out)
}

pub fn avg_pool_backward(dy: &Tensor, input_shape: &[usize], size: usize) -> Result<Tensor> {
    let (c, len) = (input_shape[0], input_shape[1]);
    let out_len = len / size;
    if dy.shape() != [c, out_len] {
        return Err(Error::CacheMismatch(format!(
            "pool cotangent {:?}, expected [{c}, {out_len}]",
            dy.shape()
        )));
    }
    let inv = 1.0 / size as f64;
    let mut dx = vec![0.0; c * len];
    for ch in 0..c {
        for i in 0..out_len {
            let g = dy.data()[ch * out_len + i] * inv;
            dx[ch * len + i * size..ch * len + (i + 1) * size].fill(g);
        }
    }
    Tensor::from_vec(input_shape, dx)
}

/// Mean over the length axis: `[C, L] -> [C]`.
pub fn global_avg_pool_forward(x: &Tensor) -> Result<Tensor> {
    let (c, len) = signal_dims(x)?;
    let inv = 1.0 / len as f64;
    let out = x
        .data()
        .chunks(len)
        .map(|row| row.iter().sum::<f64>() * inv)
        .collect();
    Tensor::from_vec(&[c], out)
}

/// Spreads each channel's gradient evenly over the pooled positions.
pub fn global_avg_pool_backward(dy: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (c, len) = (input_shape[0], input_shape[1]);
    if dy.len() != c {
        return Err(Error::CacheMismatch(format!(
            "global pool cotangent has {} values for {c} channels",
            dy.len()
        )));
    }
    let inv = 1.0 / len as f64;
    let mut dx = Vec::with_capacity(c * len);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g * inv, len));
    }
    Tensor::from_vec(input_shape, dx)
}

fn signal_dims(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [c, l] => Ok((*c, *l)),
        s => Err(Error::ShapeMismatch(format!(
            "expected a [channels, length] signal, got {s:?}"
        ))),
    }
}
