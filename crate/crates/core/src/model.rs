//! Layer graphs, parameter storage and whole-model forward/backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    avg_pool_backward, avg_pool_forward, basic_block_backward, basic_block_forward,
    conv_relu_backward, conv_relu_forward, dense_backward, dense_forward, global_avg_pool_backward,
    global_avg_pool_forward, BlockCache, BlockParams, Shortcut,
};
use crate::tensor::{conv_output_len, fill_normal, seeded_rng, Tensor};

/// Number of samples in one EEG segment.
pub const SIGNAL_LENGTH: usize = 178;

/// One stage of a model. Signal-shaped stages operate on `[channels, length]`
/// activations, the flat ones on vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Convolution followed by ReLU (the stem of the residual model).
    Conv {
        channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    /// Residual block with `neurons` output channels. With `skip = false`
    /// the shortcut is removed and the block is purely sequential.
    BasicBlock {
        neurons: usize,
        stride: usize,
        kernel_size: usize,
        skip: bool,
    },
    AvgPool {
        size: usize,
    },
    GlobalAvgPool,
    Flatten,
    Dense {
        units: usize,
        relu: bool,
    },
}

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Signal { channels: usize, length: usize },
    Flat(usize),
}

impl ActShape {
    fn dims(self) -> Vec<usize> {
        match self {
            ActShape::Signal { channels, length } => vec![channels, length],
            ActShape::Flat(n) => vec![n],
        }
    }
}

impl LayerSpec {
    /// Output shape for a given input shape, or an error when the layer
    /// cannot consume it.
    pub fn output_shape(&self, input: ActShape) -> Result<ActShape> {
        let bad = |why: String| Err(Error::InvalidConfig(why));
        match (*self, input) {
            (
                LayerSpec::Conv {
                    channels,
                    kernel_size,
                    stride,
                    padding,
                },
                ActShape::Signal { length, .. },
            ) => {
                if channels == 0 || stride == 0 {
                    return bad(format!("{self:?}: channels and stride must be >= 1"));
                }
                match conv_output_len(length, kernel_size, stride, padding) {
                    Some(l) => Ok(ActShape::Signal {
                        channels,
                        length: l,
                    }),
                    None => bad(format!("{self:?} does not fit input length {length}")),
                }
            }
            (
                LayerSpec::BasicBlock {
                    neurons,
                    stride,
                    kernel_size,
                    ..
                },
                ActShape::Signal { length, .. },
            ) => {
                if !(stride == 1 || stride == 2) {
                    return bad(format!("basic block stride must be 1 or 2, got {stride}"));
                }
                if neurons == 0 || kernel_size % 2 == 0 {
                    return bad(format!("{self:?}: needs neurons >= 1 and an odd kernel"));
                }
                match conv_output_len(length, kernel_size, stride, kernel_size / 2) {
                    Some(l) => Ok(ActShape::Signal {
                        channels: neurons,
                        length: l,
                    }),
                    None => bad(format!("{self:?} does not fit input length {length}")),
                }
            }
            (LayerSpec::AvgPool { size }, ActShape::Signal { channels, length }) => {
                if size == 0 || length / size == 0 {
                    return bad(format!("average pool {size} does not fit length {length}"));
                }
                Ok(ActShape::Signal {
                    channels,
                    length: length / size,
                })
            }
            (LayerSpec::GlobalAvgPool, ActShape::Signal { channels, .. }) => {
                Ok(ActShape::Flat(channels))
            }
            (LayerSpec::Flatten, ActShape::Signal { channels, length }) => {
                Ok(ActShape::Flat(channels * length))
            }
            (LayerSpec::Dense { units, .. }, ActShape::Flat(_)) => {
                if units == 0 {
                    return bad("dense layer needs at least one unit".into());
                }
                Ok(ActShape::Flat(units))
            }
            (spec, shape) => bad(format!(
                "{spec:?} cannot follow an activation of shape {shape:?}"
            )),
        }
    }

    /// Parameter names (without layer prefix), shapes and He fan-in for this
    /// layer given its input shape.
    fn param_layout(&self, input: ActShape) -> Vec<(&'static str, Vec<usize>, usize)> {
        let in_channels = match input {
            ActShape::Signal { channels, .. } => channels,
            ActShape::Flat(n) => n,
        };
        match *self {
            LayerSpec::Conv {
                channels,
                kernel_size,
                ..
            } => vec![
                (
                    "weight",
                    vec![channels, in_channels, kernel_size],
                    in_channels * kernel_size,
                ),
                ("bias", vec![channels], 0),
            ],
            LayerSpec::BasicBlock {
                neurons,
                stride,
                kernel_size,
                skip,
            } => {
                let mut v = vec![
                    (
                        "conv_a.weight",
                        vec![neurons, in_channels, kernel_size],
                        in_channels * kernel_size,
                    ),
                    ("conv_a.bias", vec![neurons], 0),
                    (
                        "conv_b.weight",
                        vec![neurons, neurons, kernel_size],
                        neurons * kernel_size,
                    ),
                    ("conv_b.bias", vec![neurons], 0),
                ];
                if skip && (in_channels != neurons || stride != 1) {
                    v.push((
                        "shortcut.weight",
                        vec![neurons, in_channels, 1],
                        in_channels,
                    ));
                    v.push(("shortcut.bias", vec![neurons], 0));
                }
                v
            }
            LayerSpec::Dense { units, .. } => vec![
                ("weight", vec![units, in_channels], in_channels),
                ("bias", vec![units], 0),
            ],
            LayerSpec::AvgPool { .. } | LayerSpec::GlobalAvgPool | LayerSpec::Flatten => vec![],
        }
    }
}

/// Stem, four residual blocks, global average pooling and a linear head.
pub fn proposed_specs(output_dim: usize, skip: bool) -> Vec<LayerSpec> {
    let block = |neurons, stride| LayerSpec::BasicBlock {
        neurons,
        stride,
        kernel_size: 3,
        skip,
    };
    vec![
        LayerSpec::Conv {
            channels: 16,
            kernel_size: 7,
            stride: 2,
            padding: 3,
        },
        block(16, 1),
        block(32, 2),
        block(64, 2),
        block(64, 1),
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense {
            units: output_dim,
            relu: false,
        },
    ]
}

/// Number of logits for `num_classes`: the binary job uses one sigmoid logit.
pub fn output_dim(num_classes: usize) -> usize {
    if num_classes == 2 {
        1
    } else {
        num_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    input: ActShape,
    output: ActShape,
    params: std::ops::Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    specs: Vec<LayerSpec>,
    num_classes: usize,
    input_length: usize,
    params: Vec<Param>,
    layout: Vec<LayerLayout>,
}

/// Gradients with the same names and shapes as a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<Param>,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            grads: model
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Tensor::zeros(p.value.shape()).expect("param shapes are valid"),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn is_zero(&self) -> bool {
        self.grads
            .iter()
            .all(|p| p.value.data().iter().all(|&v| v == 0.0))
    }

    fn add(&mut self, idx: usize, g: &Tensor) {
        for (a, &b) in self.grads[idx].value.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Conv { input: Tensor, output: Tensor },
    Block(Box<BlockCache>),
    AvgPool,
    GlobalAvgPool,
    Flatten,
    Dense { input: Tensor, output: Tensor },
}

/// Intermediates saved by [`Model::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

impl Model {
    /// Builds a model from an explicit layer list. Weights are He-normal
    /// (std `sqrt(2 / fan_in)`), biases zero, and the final dense layer is
    /// zero-initialised so a fresh model predicts the uniform distribution.
    pub fn build(
        specs: Vec<LayerSpec>,
        num_classes: usize,
        input_length: usize,
        seed: u64,
    ) -> Result<Self> {
        let layout = Self::layout_for(&specs, num_classes, input_length)?;
        let mut params = Vec::new();
        let last = specs.len() - 1;
        for (i, (spec, lay)) in specs.iter().zip(&layout).enumerate() {
            for (name, shape, fan_in) in spec.param_layout(lay.input) {
                let mut value = Tensor::zeros(&shape)?;
                if fan_in > 0 && i != last {
                    let mut rng = seeded_rng(seed, params.len() as u64 + 1);
                    fill_normal(
                        &mut rng,
                        value.data_mut(),
                        0.0,
                        (2.0 / fan_in as f64).sqrt(),
                    );
                }
                params.push(Param {
                    name: format!("layers.{i}.{name}"),
                    value,
                });
            }
        }
        Ok(Self {
            specs,
            num_classes,
            input_length,
            params,
            layout,
        })
    }

    /// Reassembles a model from stored parameters, checking every name and
    /// shape against the architecture.
    pub fn from_parts(
        specs: Vec<LayerSpec>,
        num_classes: usize,
        input_length: usize,
        params: Vec<Param>,
    ) -> Result<Self> {
        let template = Self::build(specs, num_classes, input_length, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "architecture has {} parameter arrays, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (want, got) in template.params.iter().zip(&params) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::InvalidConfig(format!(
                    "expected parameter {} {:?}, got {} {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        Ok(Self { params, ..template })
    }

    fn layout_for(
        specs: &[LayerSpec],
        num_classes: usize,
        input_length: usize,
    ) -> Result<Vec<LayerLayout>> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if input_length == 0 {
            return Err(Error::InvalidConfig("input length must be >= 1".into()));
        }
        match specs.last() {
            Some(LayerSpec::Dense { units, relu: false }) if *units == output_dim(num_classes) => {}
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "final layer must be a linear dense layer with {} units",
                    output_dim(num_classes)
                )))
            }
        }
        let mut shape = ActShape::Signal {
            channels: 1,
            length: input_length,
        };
        let mut n_params = 0;
        let mut layout = Vec::with_capacity(specs.len());
        for spec in specs {
            let out = spec.output_shape(shape)?;
            let count = spec.param_layout(shape).len();
            layout.push(LayerLayout {
                input: shape,
                output: out,
                params: n_params..n_params + count,
            });
            n_params += count;
            shape = out;
        }
        Ok(layout)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    /// Number of logits produced per sample.
    pub fn output_dim(&self) -> usize {
        output_dim(self.num_classes)
    }

    pub fn is_binary(&self) -> bool {
        self.output_dim() == 1
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Activation shapes after every layer, starting from the input.
    pub fn shape_chain(&self) -> Vec<Vec<usize>> {
        let mut v = vec![vec![1, self.input_length]];
        v.extend(self.layout.iter().map(|l| l.output.dims()));
        v
    }

    fn block_params(&self, layer: usize) -> BlockParams<'_> {
        let p = &self.params[self.layout[layer].params.clone()];
        let shortcut = match (&self.specs[layer], p.len()) {
            (LayerSpec::BasicBlock { skip: false, .. }, _) => Shortcut::None,
            (_, 6) => Shortcut::Projection {
                weight: &p[4].value,
                bias: &p[5].value,
            },
            _ => Shortcut::Identity,
        };
        BlockParams {
            conv_a_weight: &p[0].value,
            conv_a_bias: &p[1].value,
            conv_b_weight: &p[2].value,
            conv_b_bias: &p[3].value,
            shortcut,
        }
    }

    /// Runs one sample (`[1, L]` or `[L]`) through the network and returns
    /// the raw logits.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if x.len() != self.input_length
            || x.shape().len() > 2
            || (x.shape().len() == 2 && x.shape()[0] != 1)
        {
            return Err(Error::ShapeMismatch(format!(
                "model expects input [1, {}], got {:?}",
                self.input_length,
                x.shape()
            )));
        }
        let mut act = x.clone().reshape(&[1, self.input_length])?;
        let mut caches = Vec::with_capacity(self.specs.len());
        for (i, spec) in self.specs.iter().enumerate() {
            let p = &self.params[self.layout[i].params.clone()];
            let (next, cache) = match *spec {
                LayerSpec::Conv {
                    stride, padding, ..
                } => {
                    let y = conv_relu_forward(&act, &p[0].value, &p[1].value, stride, padding)?;
                    (
                        y.clone(),
                        LayerCache::Conv {
                            input: act,
                            output: y,
                        },
                    )
                }
                LayerSpec::BasicBlock { stride, .. } => {
                    let (y, c) = basic_block_forward(&act, &self.block_params(i), stride)?;
                    (y, LayerCache::Block(Box::new(c)))
                }
                LayerSpec::AvgPool { size } => (avg_pool_forward(&act, size)?, LayerCache::AvgPool),
                LayerSpec::GlobalAvgPool => {
                    (global_avg_pool_forward(&act)?, LayerCache::GlobalAvgPool)
                }
                LayerSpec::Flatten => {
                    let n = act.len();
                    (act.reshape(&[n])?, LayerCache::Flatten)
                }
                LayerSpec::Dense { relu, .. } => {
                    let y = dense_forward(&act, &p[0].value, &p[1].value, relu)?;
                    (
                        y.clone(),
                        LayerCache::Dense {
                            input: act,
                            output: y,
                        },
                    )
                }
            };
            act = next;
            caches.push(cache);
        }
        Ok((act, ForwardCache { layers: caches }))
    }

    /// Logits for a sample without keeping a cache.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Logit rows for every row of an `[m, L]` batch.
    pub fn forward_batch(&self, xs: &Tensor) -> Result<Tensor> {
        if xs.shape().len() != 2 || xs.shape()[1] != self.input_length {
            return Err(Error::ShapeMismatch(format!(
                "batch must be [m, {}], got {:?}",
                self.input_length,
                xs.shape()
            )));
        }
        let m = xs.shape()[0];
        let mut out = Vec::with_capacity(m * self.output_dim());
        for i in 0..m {
            let x = Tensor::from_vec(&[1, self.input_length], xs.row(i).to_vec())?;
            out.extend_from_slice(self.logits(&x)?.data());
        }
        Tensor::from_vec(&[m, self.output_dim()], out)
    }

    pub fn backward(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        self.backward_accumulate(cache, dlogits, &mut grads)?;
        Ok(grads)
    }

    /// Adds this sample's parameter gradients into `grads`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        dlogits: &Tensor,
        grads: &mut GradientSet,
    ) -> Result<()> {
        if cache.layers.len() != self.specs.len() {
            return Err(Error::CacheMismatch(format!(
                "cache has {} layers, model has {}",
                cache.layers.len(),
                self.specs.len()
            )));
        }
        if grads.grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch(
                "gradient set does not match model".into(),
            ));
        }
        if dlogits.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} logit gradients, got {}",
                self.output_dim(),
                dlogits.len()
            )));
        }
        let mut d = dlogits.clone().reshape(&[self.output_dim()])?;
        for i in (0..self.specs.len()).rev() {
            let range = self.layout[i].params.clone();
            let p = &self.params[range.clone()];
            let input_dims = self.layout[i].input.dims();
            d = match (&self.specs[i], &cache.layers[i]) {
                (
                    LayerSpec::Conv {
                        stride, padding, ..
                    },
                    LayerCache::Conv { input, output },
                ) => {
                    let (dx, dw, db) =
                        conv_relu_backward(&d, input, output, &p[0].value, *stride, *padding)?;
                    grads.add(range.start, &dw);
                    grads.add(range.start + 1, &db);
                    dx
                }
                (LayerSpec::BasicBlock { .. }, LayerCache::Block(c)) => {
                    let (dx, g) = basic_block_backward(&d, c, &self.block_params(i))?;
                    grads.add(range.start, &g.conv_a_weight);
                    grads.add(range.start + 1, &g.conv_a_bias);
                    grads.add(range.start + 2, &g.conv_b_weight);
                    grads.add(range.start + 3, &g.conv_b_bias);
                    if let Some((w, b)) = &g.shortcut {
                        grads.add(range.start + 4, w);
                        grads.add(range.start + 5, b);
                    }
                    dx
                }
                (LayerSpec::AvgPool { size }, LayerCache::AvgPool) => {
                    avg_pool_backward(&d, &input_dims, *size)?
                }
                (LayerSpec::GlobalAvgPool, LayerCache::GlobalAvgPool) => {
                    global_avg_pool_backward(&d, &input_dims)?
                }
                (LayerSpec::Flatten, LayerCache::Flatten) => d.reshape(&input_dims)?,
                (LayerSpec::Dense { relu, .. }, LayerCache::Dense { input, output }) => {
                    if input.len() != p[0].value.shape()[1] {
                        return Err(Error::CacheMismatch(format!(
                            "layer {i} input size changed"
                        )));
                    }
                    let (dx, dw, db) = dense_backward(&d, input, output, &p[0].value, *relu)?;
                    grads.add(range.start, &dw);
                    grads.add(range.start + 1, &db);
                    dx
                }
                (spec, _) => {
                    return Err(Error::CacheMismatch(format!(
                        "layer {i} ({spec:?}) has a cache from a different layer type"
                    )))
                }
            };
            if d.len() != input_dims.iter().product::<usize>() {
                return Err(Error::CacheMismatch(format!(
                    "layer {i} cache shape does not match the model"
                )));
            }
        }
        Ok(())
    }
}

/// The residual model used for both jobs.
pub fn build_proposed_model(num_classes: usize, input_length: usize, seed: u64) -> Result<Model> {
    if input_length < 16 {
        return Err(Error::InvalidConfig(format!(
            "input length {input_length} is too short for the downsampling chain (need >= 16)"
        )));
    }
    Model::build(
        proposed_specs(output_dim(num_classes), true),
        num_classes,
        input_length,
        seed,
    )
}
