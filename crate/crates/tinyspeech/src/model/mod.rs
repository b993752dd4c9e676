//! Runnable network built from a [`ModelConfig`]: parameter storage, the
//! whole-graph forward/backward passes, and the parameter registry the
//! optimizer and serializer work from.

pub mod config;
pub mod serialize;

pub use config::{ActivationSpec, ExpansionSpec, LayerSpec, ModelConfig, PaddingSpec};
pub use serialize::{load_model, save_model, FORMAT_VERSION};

use std::collections::BTreeMap;

use crate::condenser::{
    condenser_backward, condenser_forward, AttentionCondenser, CondenserCache,
};
use crate::error::{Error, Result};
use crate::ops::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, dense, dense_backward,
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    softmax, softmax_xent_grad, BatchNormCache, BatchNormParams, ConvParams, DenseParams,
    RunMode,
};
use crate::quant::QuantizedTensor;
use crate::tensor::{Fill, Rng, Tensor};

/// Numeric path for inference. `F32` rounds the input and every layer output
/// through `f32` precision, emulating a 32-bit execution of a model whose
/// parameters are `f32`-representable (initialization and the model file
/// keep them so).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// One instantiated layer with its parameters.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv {
        params: ConvParams,
        activation: ActivationSpec,
        bn: Option<BatchNormParams>,
    },
    Condenser(AttentionCondenser),
    GlobalAvgPool,
    Dense(DenseParams),
    Softmax,
}

/// Forward state kept for the backward pass, one entry per layer.
pub enum LayerCache {
    Conv {
        input: Tensor,
        bn: Option<BatchNormCache>,
        act_in: Tensor,
        act_out: Option<Tensor>,
    },
    Condenser(CondenserCache),
    GlobalAvgPool {
        input_shape: [usize; 4],
    },
    Dense {
        inputs: Vec<Vec<f64>>,
    },
    Softmax,
}

pub struct ForwardOutput {
    /// One probability vector per sample, each on the simplex.
    pub probs: Vec<Vec<f64>>,
    /// Present in train mode only.
    pub caches: Option<Vec<LayerCache>>,
}

/// Parameter gradients in registry order.
pub struct GradStore {
    pub entries: Vec<(String, Vec<f64>)>,
}

impl GradStore {
    /// Elementwise accumulate; registries must align.
    pub fn accumulate(&mut self, other: &GradStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Train("gradient registries differ in length".into()));
        }
        for ((name_a, a), (name_b, b)) in self.entries.iter_mut().zip(&other.entries) {
            if name_a != name_b || a.len() != b.len() {
                return Err(Error::Train(format!(
                    "gradient registry mismatch at {name_a} vs {name_b}"
                )));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, g) in &mut self.entries {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
    /// Quantized payloads by parameter name, populated by `quantize_model`.
    /// The corresponding registry entries hold the dequantized values.
    pub quantized: BTreeMap<String, QuantizedTensor>,
}

/// Builds a model with deterministic seed-derived initialization. Parameters
/// are drawn in f64 and rounded through f32, matching the model file's
/// storage precision, so build -> save -> load reproduces forward outputs
/// bitwise.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let shapes = config.shape_chain()?;
    let mut rng = Rng::new(seed);
    let mut layers = Vec::with_capacity(config.layers.len());
    let mut in_c = config.input_shape[1];
    let mut in_hw = (config.input_shape[2], config.input_shape[3]);
    for (i, spec) in config.layers.iter().enumerate() {
        match spec {
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                padding,
                activation,
                batch_norm,
                groups,
            } => {
                let fan_in = (in_c / groups) * kernel[0] * kernel[1];
                let weights = Tensor::filled(
                    [*channels, in_c / groups, kernel[0], kernel[1]],
                    Fill::HeNormal {
                        fan_in,
                        rng: &mut rng,
                    },
                )?;
                layers.push(Layer::Conv {
                    params: ConvParams {
                        weights,
                        bias: vec![0.0; *channels],
                        groups: *groups,
                        stride: (stride[0], stride[1]),
                        padding: (*padding).into(),
                    },
                    activation: *activation,
                    bn: batch_norm.then(|| BatchNormParams::new(*channels)),
                });
            }
            LayerSpec::AttentionCondenser {
                embed1_channels,
                embed2_channels,
                pool,
                pool_stride,
                groups,
                expansion,
            } => {
                let (stride, g) = ModelConfig::condenser_defaults(
                    in_c,
                    *embed1_channels,
                    *pool,
                    *pool_stride,
                    *groups,
                );
                let mut cond = AttentionCondenser::new(
                    in_c,
                    *embed1_channels,
                    *embed2_channels,
                    (pool[0], pool[1]),
                    stride,
                    g,
                    &mut rng,
                )?;
                cond.expansion = (*expansion).into();
                layers.push(Layer::Condenser(cond));
            }
            LayerSpec::GlobalAvgPool => layers.push(Layer::GlobalAvgPool),
            LayerSpec::Dense { units } => {
                let in_dim = in_c * in_hw.0 * in_hw.1;
                let weights = Tensor::filled(
                    [*units, in_dim, 1, 1],
                    Fill::HeNormal {
                        fan_in: in_dim,
                        rng: &mut rng,
                    },
                )?;
                layers.push(Layer::Dense(DenseParams {
                    weights: weights.into_data(),
                    bias: vec![0.0; *units],
                    in_dim,
                    out_dim: *units,
                }));
            }
            LayerSpec::Softmax => layers.push(Layer::Softmax),
        }
        let (c, h, w) = shapes[i];
        in_c = c;
        in_hw = (h, w);
    }
    let mut model = Model {
        config: config.clone(),
        layers,
        quantized: BTreeMap::new(),
    };
    for (_, p) in model.params_mut() {
        for v in p.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
    Ok(model)
}

impl Model {
    /// Learnable parameters in fixed layer order: `(name, values)`.
    pub fn params(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { params, bn, .. } => {
                    out.push((format!("layer{i}.conv.weight"), params.weights.data()));
                    out.push((format!("layer{i}.conv.bias"), params.bias.as_slice()));
                    if let Some(bn) = bn {
                        out.push((format!("layer{i}.bn.gamma"), bn.gamma.as_slice()));
                        out.push((format!("layer{i}.bn.beta"), bn.beta.as_slice()));
                    }
                }
                Layer::Condenser(c) => {
                    out.push((
                        format!("layer{i}.condenser.embed1.weight"),
                        c.embed1.weights.data(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed1.bias"),
                        c.embed1.bias.as_slice(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed2.weight"),
                        c.embed2.weights.data(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed2.bias"),
                        c.embed2.bias.as_slice(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.scale_logit"),
                        std::slice::from_ref(&c.scale_logit),
                    ));
                }
                Layer::Dense(d) => {
                    out.push((format!("layer{i}.dense.weight"), d.weights.as_slice()));
                    out.push((format!("layer{i}.dense.bias"), d.bias.as_slice()));
                }
                Layer::GlobalAvgPool | Layer::Softmax => {}
            }
        }
        out
    }

    /// Mutable view of the same registry, same order as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv { params, bn, .. } => {
                    out.push((
                        format!("layer{i}.conv.weight"),
                        params.weights.data_mut().as_mut_slice(),
                    ));
                    out.push((format!("layer{i}.conv.bias"), params.bias.as_mut_slice()));
                    if let Some(bn) = bn {
                        out.push((format!("layer{i}.bn.gamma"), bn.gamma.as_mut_slice()));
                        out.push((format!("layer{i}.bn.beta"), bn.beta.as_mut_slice()));
                    }
                }
                Layer::Condenser(c) => {
                    out.push((
                        format!("layer{i}.condenser.embed1.weight"),
                        c.embed1.weights.data_mut().as_mut_slice(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed1.bias"),
                        c.embed1.bias.as_mut_slice(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed2.weight"),
                        c.embed2.weights.data_mut().as_mut_slice(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed2.bias"),
                        c.embed2.bias.as_mut_slice(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.scale_logit"),
                        std::slice::from_mut(&mut c.scale_logit),
                    ));
                }
                Layer::Dense(d) => {
                    out.push((format!("layer{i}.dense.weight"), d.weights.as_mut_slice()));
                    out.push((format!("layer{i}.dense.bias"), d.bias.as_mut_slice()));
                }
                Layer::GlobalAvgPool | Layer::Softmax => {}
            }
        }
        out
    }

    /// Registry shapes, aligned with [`Model::params`].
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { params, bn, .. } => {
                    out.push((
                        format!("layer{i}.conv.weight"),
                        params.weights.shape().to_vec(),
                    ));
                    out.push((format!("layer{i}.conv.bias"), vec![params.bias.len()]));
                    if let Some(bn) = bn {
                        out.push((format!("layer{i}.bn.gamma"), vec![bn.gamma.len()]));
                        out.push((format!("layer{i}.bn.beta"), vec![bn.beta.len()]));
                    }
                }
                Layer::Condenser(c) => {
                    out.push((
                        format!("layer{i}.condenser.embed1.weight"),
                        c.embed1.weights.shape().to_vec(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed1.bias"),
                        vec![c.embed1.bias.len()],
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed2.weight"),
                        c.embed2.weights.shape().to_vec(),
                    ));
                    out.push((
                        format!("layer{i}.condenser.embed2.bias"),
                        vec![c.embed2.bias.len()],
                    ));
                    out.push((format!("layer{i}.condenser.scale_logit"), vec![1]));
                }
                Layer::Dense(d) => {
                    out.push((format!("layer{i}.dense.weight"), vec![d.out_dim, d.in_dim]));
                    out.push((format!("layer{i}.dense.bias"), vec![d.out_dim]));
                }
                Layer::GlobalAvgPool | Layer::Softmax => {}
            }
        }
        out
    }

    /// Total learnable parameter count.
    pub fn num_params(&self) -> u64 {
        self.params().iter().map(|(_, p)| p.len() as u64).sum()
    }

    /// Batch-norm running statistics (not learnable, but model state that
    /// the file format persists).
    pub fn running_stats(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Conv { bn: Some(bn), .. } = layer {
                out.push((format!("layer{i}.bn.running_mean"), bn.running_mean.as_slice()));
                out.push((format!("layer{i}.bn.running_var"), bn.running_var.as_slice()));
            }
        }
        out
    }

    pub fn running_stats_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Conv { bn: Some(bn), .. } = layer {
                out.push((
                    format!("layer{i}.bn.running_mean"),
                    bn.running_mean.as_mut_slice(),
                ));
                out.push((
                    format!("layer{i}.bn.running_var"),
                    bn.running_var.as_mut_slice(),
                ));
            }
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let [_, ec, eh, ew] = self.config.input_shape;
        if (c, h, w) != (ec, eh, ew) {
            return Err(Error::Shape(format!(
                "input shape (_, {c}, {h}, {w}) does not match model input (_, {ec}, {eh}, {ew})"
            )));
        }
        Ok(())
    }

    /// Training-mode forward: keeps per-layer caches and updates batch-norm
    /// running statistics.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv {
                    params,
                    activation,
                    bn,
                } => {
                    let input = act;
                    let conv_out = conv2d(&input, params)?;
                    let (act_in, bn_cache) = match bn {
                        Some(p) => {
                            let (y, cache) = batchnorm(&conv_out, p, RunMode::Train)?;
                            (y, cache)
                        }
                        None => (conv_out, None),
                    };
                    let (out, act_out) = apply_activation(*activation, &act_in);
                    caches.push(LayerCache::Conv {
                        input,
                        bn: bn_cache,
                        act_in,
                        act_out,
                    });
                    act = out;
                }
                Layer::Condenser(c) => {
                    let (out, cache) = condenser_forward(&act, c)?;
                    caches.push(LayerCache::Condenser(cache));
                    act = out;
                }
                Layer::GlobalAvgPool => {
                    let shape = act.shape();
                    act = global_avg_pool(&act);
                    caches.push(LayerCache::GlobalAvgPool { input_shape: shape });
                }
                Layer::Dense(d) => {
                    let inputs = tensor_rows(&act);
                    let mut outs = Vec::with_capacity(inputs.len());
                    for row in &inputs {
                        outs.push(dense(row, d)?);
                    }
                    caches.push(LayerCache::Dense { inputs });
                    rows = outs;
                }
                Layer::Softmax => {
                    rows = rows.iter().map(|r| softmax(r)).collect();
                    caches.push(LayerCache::Softmax);
                }
            }
        }
        Ok(ForwardOutput {
            probs: rows,
            caches: Some(caches),
        })
    }

    /// Inference forward: immutable, cache-free.
    pub fn forward_infer(&self, x: &Tensor, precision: Precision) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let round = |t: Tensor| match precision {
            Precision::F64 => t,
            Precision::F32 => t.round_to_f32(),
        };
        let mut act = round(x.clone());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    params,
                    activation,
                    bn,
                } => {
                    let mut y = conv2d(&act, params)?;
                    if let Some(p) = bn {
                        y = crate::ops::norm::batchnorm_infer(&y, p)?;
                    }
                    let (out, _) = apply_activation(*activation, &y);
                    act = round(out);
                }
                Layer::Condenser(c) => {
                    let (out, _) = condenser_forward(&act, c)?;
                    act = round(out);
                }
                Layer::GlobalAvgPool => act = round(global_avg_pool(&act)),
                Layer::Dense(d) => {
                    let inputs = tensor_rows(&act);
                    rows = Vec::with_capacity(inputs.len());
                    for row in &inputs {
                        let mut y = dense(row, d)?;
                        if precision == Precision::F32 {
                            for v in y.iter_mut() {
                                *v = *v as f32 as f64;
                            }
                        }
                        rows.push(y);
                    }
                }
                Layer::Softmax => {
                    rows = rows.iter().map(|r| softmax(r)).collect();
                }
            }
        }
        Ok(rows)
    }

    /// Backward pass for the mean cross-entropy loss over the batch, fusing
    /// the softmax/cross-entropy gradient (`probs - onehot`). Returns
    /// gradients aligned with the parameter registry.
    pub fn backward(
        &self,
        caches: &[LayerCache],
        probs: &[Vec<f64>],
        labels: &[usize],
    ) -> Result<GradStore> {
        if caches.len() != self.layers.len() {
            return Err(Error::Train(
                "cache does not match model layer count".into(),
            ));
        }
        if probs.len() != labels.len() {
            return Err(Error::Train("probs/labels length mismatch".into()));
        }
        let batch = probs.len();
        let inv_batch = 1.0 / batch.max(1) as f64;

        // Gradient at the logits (dense output), one row per sample.
        let mut grad_rows: Vec<Vec<f64>> = probs
            .iter()
            .zip(labels)
            .map(|(p, &label)| {
                let mut g = softmax_xent_grad(p, label);
                for v in g.iter_mut() {
                    *v *= inv_batch;
                }
                g
            })
            .collect();

        let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
        let mut grad_act: Option<Tensor> = None;

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[i];
            match (layer, cache) {
                (Layer::Softmax, LayerCache::Softmax) => {
                    // fused with cross-entropy above
                }
                (Layer::Dense(d), LayerCache::Dense { inputs }) => {
                    if inputs.len() != grad_rows.len() {
                        return Err(Error::Train("dense cache batch mismatch".into()));
                    }
                    let mut grad_w = vec![0.0; d.weights.len()];
                    let mut grad_b = vec![0.0; d.bias.len()];
                    let mut grad_in_rows = Vec::with_capacity(inputs.len());
                    for (row, grad_y) in inputs.iter().zip(&grad_rows) {
                        let (gx, gw, gb) = dense_backward(row, d, grad_y)?;
                        for (a, b) in grad_w.iter_mut().zip(&gw) {
                            *a += b;
                        }
                        for (a, b) in grad_b.iter_mut().zip(&gb) {
                            *a += b;
                        }
                        grad_in_rows.push(gx);
                    }
                    grads.push((format!("layer{i}.dense.bias"), grad_b));
                    grads.push((format!("layer{i}.dense.weight"), grad_w));
                    grad_rows = grad_in_rows;
                }
                (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool { input_shape }) => {
                    let g = rows_to_tensor(&grad_rows, [input_shape[0], input_shape[1], 1, 1])?;
                    grad_act = Some(global_avg_pool_backward(&g, *input_shape)?);
                }
                (Layer::Condenser(c), LayerCache::Condenser(cache)) => {
                    let g = grad_act
                        .take()
                        .ok_or_else(|| Error::Train("missing activation gradient".into()))?;
                    let (gv, pg) = condenser_backward(c, cache, &g)?;
                    grads.push((
                        format!("layer{i}.condenser.scale_logit"),
                        vec![pg.scale_logit],
                    ));
                    grads.push((
                        format!("layer{i}.condenser.embed2.bias"),
                        pg.embed2_bias,
                    ));
                    grads.push((
                        format!("layer{i}.condenser.embed2.weight"),
                        pg.embed2_weights.into_data(),
                    ));
                    grads.push((
                        format!("layer{i}.condenser.embed1.bias"),
                        pg.embed1_bias,
                    ));
                    grads.push((
                        format!("layer{i}.condenser.embed1.weight"),
                        pg.embed1_weights.into_data(),
                    ));
                    grad_act = Some(gv);
                }
                (
                    Layer::Conv {
                        params,
                        activation,
                        bn,
                    },
                    LayerCache::Conv {
                        input,
                        bn: bn_cache,
                        act_in,
                        act_out,
                    },
                ) => {
                    let g = grad_act
                        .take()
                        .ok_or_else(|| Error::Train("missing activation gradient".into()))?;
                    let g = activation_backward(*activation, act_in, act_out.as_ref(), &g);
                    let g = match (bn, bn_cache) {
                        (Some(p), Some(cache)) => {
                            let (gx, ggamma, gbeta) = batchnorm_backward(cache, p, &g)?;
                            grads.push((format!("layer{i}.bn.beta"), gbeta));
                            grads.push((format!("layer{i}.bn.gamma"), ggamma));
                            gx
                        }
                        (None, None) => g,
                        _ => return Err(Error::Train("batch-norm cache mismatch".into())),
                    };
                    let (gx, gw, gb) = conv2d_backward(input, params, &g)?;
                    grads.push((format!("layer{i}.conv.bias"), gb));
                    grads.push((format!("layer{i}.conv.weight"), gw.into_data()));
                    grad_act = Some(gx);
                }
                _ => return Err(Error::Train(format!("cache mismatch at layer {i}"))),
            }
        }

        // Reverse into registry (forward) order and verify alignment.
        grads.reverse();
        let expected: Vec<String> = self.params().iter().map(|(n, _)| n.clone()).collect();
        let got: Vec<&String> = grads.iter().map(|(n, _)| n).collect();
        if expected.len() != grads.len() || expected.iter().zip(&got).any(|(a, b)| &a != b) {
            return Err(Error::Train("gradient registry misaligned".into()));
        }
        Ok(GradStore { entries: grads })
    }
}

fn apply_activation(spec: ActivationSpec, x: &Tensor) -> (Tensor, Option<Tensor>) {
    match spec {
        ActivationSpec::Relu => (relu(x), None),
        ActivationSpec::Sigmoid => {
            let y = sigmoid(x);
            (y.clone(), Some(y))
        }
        ActivationSpec::None => (x.clone(), None),
    }
}

fn activation_backward(
    spec: ActivationSpec,
    act_in: &Tensor,
    act_out: Option<&Tensor>,
    grad: &Tensor,
) -> Tensor {
    match spec {
        ActivationSpec::Relu => relu_backward(act_in, grad),
        ActivationSpec::Sigmoid => {
            sigmoid_backward(act_out.expect("sigmoid cache holds output"), grad)
        }
        ActivationSpec::None => grad.clone(),
    }
}

/// Flattens each sample of `(N, C, H, W)` into a row of length `C*H*W`.
fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let [n, c, h, w] = t.shape();
    let row_len = c * h * w;
    (0..n)
        .map(|i| t.data()[i * row_len..(i + 1) * row_len].to_vec())
        .collect()
}

fn rows_to_tensor(rows: &[Vec<f64>], shape: [usize; 4]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(shape.iter().product());
    for row in rows {
        data.extend_from_slice(row);
    }
    Tensor::from_vec(shape, data)
}
