//! Architectural and computational cost accounting: per-layer parameter and
//! multiply-add counts, model size in kilobits, and the deployment
//! constraint indicator.
//!
//! Counting conventions (stated because published comparisons depend on
//! them): one multiply-accumulate is one mult-add; activations, pooling,
//! unpooling, global average pooling, and softmax cost zero; batch norm
//! counts its folded inference affine (one mult-add per element); selective
//! attention costs two mult-adds per element (one product with the
//! attention map, one scale product). Batch-norm running statistics are not
//! parameters; gamma/beta are. Kilobits use decimal kilo: `params * bits /
//! 1000`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::config::{LayerSpec, ModelConfig};

#[derive(Debug, Clone, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub mult_adds: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityReport {
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_mult_adds: u64,
    pub model_size_kbits: f64,
    pub weight_bits: u32,
    pub input_shape: [usize; 4],
}

pub fn conv_param_count(c_out: usize, c_in: usize, groups: usize, k: (usize, usize)) -> u64 {
    (c_out * (c_in / groups) * k.0 * k.1 + c_out) as u64
}

pub fn conv_mult_adds(
    c_out: usize,
    out_hw: (usize, usize),
    c_in: usize,
    groups: usize,
    k: (usize, usize),
) -> u64 {
    let out_elems = c_out * out_hw.0 * out_hw.1;
    (out_elems * (c_in / groups) * k.0 * k.1) as u64
}

pub fn dense_param_count(in_dim: usize, out_dim: usize) -> u64 {
    (in_dim * out_dim + out_dim) as u64
}

/// `params * bits / 1000` (decimal kilo).
pub fn model_size_kbits(params: u64, weight_bits: u32) -> Result<f64> {
    match weight_bits {
        4 | 8 | 16 | 32 => Ok(params as f64 * weight_bits as f64 / 1000.0),
        other => Err(Error::Config(format!(
            "unsupported weight width {other} for size accounting"
        ))),
    }
}

/// Costs the config at its own input shape and weight width.
pub fn analyze(config: &ModelConfig) -> Result<ComplexityReport> {
    analyze_with(config, config.input_shape, config.weight_bits)
}

/// Costs the config at an explicit input shape and weight width.
pub fn analyze_with(
    config: &ModelConfig,
    input_shape: [usize; 4],
    weight_bits: u32,
) -> Result<ComplexityReport> {
    let mut cfg = config.clone();
    cfg.input_shape = input_shape;
    cfg.validate()?;
    let shapes = cfg.shape_chain()?;

    let mut layers = Vec::new();
    let mut c = cfg.input_shape[1];
    let mut h = cfg.input_shape[2];
    let mut w = cfg.input_shape[3];
    for (i, spec) in cfg.layers.iter().enumerate() {
        let (oc, oh, ow) = shapes[i];
        match spec {
            LayerSpec::Conv {
                channels,
                kernel,
                groups,
                batch_norm,
                ..
            } => {
                layers.push(LayerCost {
                    name: format!("layer{i}.conv"),
                    params: conv_param_count(*channels, c, *groups, (kernel[0], kernel[1])),
                    mult_adds: conv_mult_adds(
                        *channels,
                        (oh, ow),
                        c,
                        *groups,
                        (kernel[0], kernel[1]),
                    ),
                });
                if *batch_norm {
                    layers.push(LayerCost {
                        name: format!("layer{i}.bn"),
                        params: 2 * *channels as u64,
                        mult_adds: (*channels * oh * ow) as u64,
                    });
                }
            }
            LayerSpec::AttentionCondenser {
                embed1_channels,
                embed2_channels,
                pool,
                pool_stride,
                groups,
                ..
            } => {
                let (stride, g) = ModelConfig::condenser_defaults(
                    c,
                    *embed1_channels,
                    *pool,
                    *pool_stride,
                    *groups,
                );
                let ph = (h - pool[0]) / stride.0 + 1;
                let pw = (w - pool[1]) / stride.1 + 1;
                // embedding runs at pooled resolution; 3x3 same-padding
                // grouped conv, then pointwise back to the input channels
                let params = conv_param_count(*embed1_channels, c, g, (3, 3))
                    + conv_param_count(*embed2_channels, *embed1_channels, 1, (1, 1))
                    + 1; // learnable scale
                let mult_adds = conv_mult_adds(*embed1_channels, (ph, pw), c, g, (3, 3))
                    + conv_mult_adds(*embed2_channels, (ph, pw), *embed1_channels, 1, (1, 1))
                    + 2 * (c * h * w) as u64; // selective attention
                layers.push(LayerCost {
                    name: format!("layer{i}.condenser"),
                    params,
                    mult_adds,
                });
            }
            LayerSpec::GlobalAvgPool => {
                layers.push(LayerCost {
                    name: format!("layer{i}.global_avg_pool"),
                    params: 0,
                    mult_adds: 0,
                });
            }
            LayerSpec::Dense { units } => {
                let in_dim = c * h * w;
                layers.push(LayerCost {
                    name: format!("layer{i}.dense"),
                    params: dense_param_count(in_dim, *units),
                    mult_adds: (in_dim * units) as u64,
                });
            }
            LayerSpec::Softmax => {
                layers.push(LayerCost {
                    name: format!("layer{i}.softmax"),
                    params: 0,
                    mult_adds: 0,
                });
            }
        }
        c = oc;
        h = oh;
        w = ow;
    }

    let total_params: u64 = layers.iter().map(|l| l.params).sum();
    let total_mult_adds: u64 = layers.iter().map(|l| l.mult_adds).sum();
    Ok(ComplexityReport {
        layers,
        total_params,
        total_mult_adds,
        model_size_kbits: model_size_kbits(total_params, weight_bits)?,
        weight_bits,
        input_shape,
    })
}

/// Deployment constraints: the indicator is 1 iff all checks pass.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSpec {
    pub min_val_accuracy: f64,
    /// Exclusive bound: the count must be strictly below this.
    pub max_params: u64,
    pub required_weight_bits: u32,
    pub micro_ops_only: bool,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec {
            min_val_accuracy: 0.90,
            max_params: 15_000,
            required_weight_bits: 8,
            micro_ops_only: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintVerdict {
    pub pass: bool,
    pub checks: Vec<ConstraintCheck>,
}

pub fn check_constraints(
    report: &ComplexityReport,
    val_accuracy: f64,
    spec: &ConstraintSpec,
    config: &ModelConfig,
) -> ConstraintVerdict {
    let mut checks = Vec::new();
    checks.push(ConstraintCheck {
        name: "val_accuracy".into(),
        pass: val_accuracy >= spec.min_val_accuracy,
        detail: format!("{} >= {}", val_accuracy, spec.min_val_accuracy),
    });
    checks.push(ConstraintCheck {
        name: "params".into(),
        pass: report.total_params < spec.max_params,
        detail: format!("{} < {}", report.total_params, spec.max_params),
    });
    checks.push(ConstraintCheck {
        name: "weight_bits".into(),
        pass: report.weight_bits == spec.required_weight_bits,
        detail: format!("{} == {}", report.weight_bits, spec.required_weight_bits),
    });
    let micro = if spec.micro_ops_only {
        match config.layers.iter().position(|l| l.has_batch_norm()) {
            Some(i) => ConstraintCheck {
                name: "micro_ops".into(),
                pass: false,
                detail: format!("layer {i} uses batch_norm, outside the microcontroller op set"),
            },
            None => ConstraintCheck {
                name: "micro_ops".into(),
                pass: true,
                detail: "no batch_norm layers".into(),
            },
        }
    } else {
        ConstraintCheck {
            name: "micro_ops".into(),
            pass: true,
            detail: "not required".into(),
        }
    };
    checks.push(micro);
    ConstraintVerdict {
        pass: checks.iter().all(|c| c.pass),
        checks,
    }
}

/// Human-readable per-layer table.
pub fn format_table(report: &ComplexityReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>10} {:>14}\n",
        "layer", "params", "mult-adds"
    ));
    for row in &report.layers {
        out.push_str(&format!(
            "{:<28} {:>10} {:>14}\n",
            row.name, row.params, row.mult_adds
        ));
    }
    out.push_str(&format!(
        "{:<28} {:>10} {:>14}\n",
        "total", report.total_params, report.total_mult_adds
    ));
    out.push_str(&format!(
        "model size: {:.3} kbits at {}-bit weights\n",
        report.model_size_kbits, report.weight_bits
    ));
    out
}
