//! Declarative architecture description and its validation.
//!
//! A config is an ordered layer list following the network template: an
//! input convolution, a stack of attention condensers, a second convolution,
//! global average pooling, one fully-connected layer, and softmax. The last
//! two layers must be `dense(n_classes)` and `softmax`; channel counts must
//! chain; `micro_ops_only` forbids batch normalization anywhere.
//!
//! Config files are JSON with exactly these fields; unknown keys are errors.

use serde::{Deserialize, Serialize};

use crate::condenser::{default_groups, Expansion};
use crate::error::{Error, Result};
use crate::ops::Padding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PaddingSpec {
    Valid,
    #[default]
    Same,
}

impl From<PaddingSpec> for Padding {
    fn from(p: PaddingSpec) -> Padding {
        match p {
            PaddingSpec::Valid => Padding::Valid,
            PaddingSpec::Same => Padding::Same,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActivationSpec {
    #[default]
    Relu,
    Sigmoid,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionSpec {
    #[default]
    Replicate,
    Switch,
}

impl From<ExpansionSpec> for Expansion {
    fn from(e: ExpansionSpec) -> Expansion {
        match e {
            ExpansionSpec::Replicate => Expansion::Replicate,
            ExpansionSpec::Switch => Expansion::Switch,
        }
    }
}

fn default_stride() -> [usize; 2] {
    [1, 1]
}

fn default_groups_one() -> usize {
    1
}

fn default_weight_bits() -> u32 {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        channels: usize,
        kernel: [usize; 2],
        #[serde(default = "default_stride")]
        stride: [usize; 2],
        #[serde(default)]
        padding: PaddingSpec,
        #[serde(default)]
        activation: ActivationSpec,
        #[serde(default)]
        batch_norm: bool,
        #[serde(default = "default_groups_one")]
        groups: usize,
    },
    AttentionCondenser {
        embed1_channels: usize,
        embed2_channels: usize,
        pool: [usize; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_stride: Option<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        groups: Option<usize>,
        #[serde(default)]
        expansion: ExpansionSpec,
    },
    GlobalAvgPool,
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::AttentionCondenser { .. } => "attention_condenser",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn has_batch_norm(&self) -> bool {
        matches!(self, LayerSpec::Conv { batch_norm: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `(1, C, T, F)`: single-sample shape; the batch dim is replaced at run
    /// time.
    pub input_shape: [usize; 4],
    pub n_classes: usize,
    #[serde(default)]
    pub micro_ops_only: bool,
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u32,
    pub layers: Vec<LayerSpec>,
}

/// Per-layer output extent as `(channels, height, width)`.
pub type LayerShape = (usize, usize, usize);

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<ModelConfig> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Full structural validation: field ranges, template shape, the
    /// micro-ops restriction, and the whole shape chain.
    pub fn validate(&self) -> Result<()> {
        if self.input_shape[0] != 1 {
            return Err(Error::Config(format!(
                "input_shape batch dim must be 1, got {}",
                self.input_shape[0]
            )));
        }
        if self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Config("input_shape dims must be nonzero".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.weight_bits != 8 && self.weight_bits != 32 {
            return Err(Error::Config(format!(
                "weight_bits must be 8 or 32, got {}",
                self.weight_bits
            )));
        }
        if self.layers.len() < 2 {
            return Err(Error::Config(
                "config needs at least dense and softmax layers".into(),
            ));
        }
        let n = self.layers.len();
        match &self.layers[n - 2] {
            LayerSpec::Dense { units } if *units == self.n_classes => {}
            LayerSpec::Dense { units } => {
                return Err(Error::Config(format!(
                    "final dense layer has {} units, expected n_classes = {}",
                    units, self.n_classes
                )))
            }
            other => {
                return Err(Error::Config(format!(
                    "second-to-last layer must be dense, got {}",
                    other.kind()
                )))
            }
        }
        if !matches!(self.layers[n - 1], LayerSpec::Softmax) {
            return Err(Error::Config(format!(
                "last layer must be softmax, got {}",
                self.layers[n - 1].kind()
            )));
        }
        if self.micro_ops_only {
            for (i, layer) in self.layers.iter().enumerate() {
                if layer.has_batch_norm() {
                    return Err(Error::Config(format!(
                        "micro_ops_only: layer {} ({}) uses batch_norm, which is not in the \
                         microcontroller op set",
                        i,
                        layer.kind()
                    )));
                }
            }
        }
        self.shape_chain()?;
        Ok(())
    }

    /// Walks the layer list and returns the output `(C, H, W)` after every
    /// layer. Fails with the offending layer index on any inconsistency.
    pub fn shape_chain(&self) -> Result<Vec<LayerShape>> {
        let mut c = self.input_shape[1];
        let mut h = self.input_shape[2];
        let mut w = self.input_shape[3];
        let mut dense_seen = false;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| Error::Config(format!("layer {i} ({}): {msg}", layer.kind()));
            if dense_seen && !matches!(layer, LayerSpec::Softmax) {
                return Err(fail("only softmax may follow the dense layer".into()));
            }
            match layer {
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    padding,
                    groups,
                    ..
                } => {
                    if *channels == 0 || kernel.contains(&0) || stride.contains(&0) {
                        return Err(fail("channels, kernel, stride must be nonzero".into()));
                    }
                    if *groups == 0 || c % groups != 0 || channels % groups != 0 {
                        return Err(fail(format!(
                            "groups {} must divide in channels {} and out channels {}",
                            groups, c, channels
                        )));
                    }
                    let geom = crate::ops::conv::conv_geometry(
                        (h, w),
                        (kernel[0], kernel[1]),
                        (stride[0], stride[1]),
                        (*padding).into(),
                    )
                    .map_err(|e| fail(e.to_string()))?;
                    c = *channels;
                    h = geom.1 .0;
                    w = geom.1 .1;
                }
                LayerSpec::AttentionCondenser {
                    embed1_channels,
                    embed2_channels,
                    pool,
                    pool_stride,
                    groups,
                    ..
                } => {
                    if *embed2_channels != c {
                        return Err(fail(format!(
                            "embed2_channels {} must equal incoming channels {}",
                            embed2_channels, c
                        )));
                    }
                    if *embed1_channels == 0 || pool.contains(&0) {
                        return Err(fail("embed1_channels and pool must be nonzero".into()));
                    }
                    let stride = pool_stride.unwrap_or(*pool);
                    if stride.contains(&0) {
                        return Err(fail("pool_stride must be nonzero".into()));
                    }
                    if pool[0] > h || pool[1] > w {
                        return Err(fail(format!(
                            "pool {}x{} exceeds activations {}x{}",
                            pool[0], pool[1], h, w
                        )));
                    }
                    let g = groups.unwrap_or_else(|| default_groups(c, *embed1_channels));
                    if g == 0 || c % g != 0 || embed1_channels % g != 0 {
                        return Err(fail(format!(
                            "groups {} must divide channels {} and embed1_channels {}",
                            g, c, embed1_channels
                        )));
                    }
                    // spatial dims are preserved by the condenser
                }
                LayerSpec::GlobalAvgPool => {
                    h = 1;
                    w = 1;
                }
                LayerSpec::Dense { units } => {
                    if *units == 0 {
                        return Err(fail("units must be nonzero".into()));
                    }
                    dense_seen = true;
                    c = *units;
                    h = 1;
                    w = 1;
                }
                LayerSpec::Softmax => {
                    if !dense_seen {
                        return Err(fail("softmax must follow the dense layer".into()));
                    }
                }
            }
            out.push((c, h, w));
        }
        Ok(out)
    }

    /// Effective condenser geometry after defaulting: `(stride, groups)`.
    pub fn condenser_defaults(
        in_channels: usize,
        embed1_channels: usize,
        pool: [usize; 2],
        pool_stride: Option<[usize; 2]>,
        groups: Option<usize>,
    ) -> ((usize, usize), usize) {
        let s = pool_stride.unwrap_or(pool);
        (
            (s[0], s[1]),
            groups.unwrap_or_else(|| default_groups(in_channels, embed1_channels)),
        )
    }
}
