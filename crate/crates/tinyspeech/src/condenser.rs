//! Attention condenser: condensation, condensed embedding, expansion, and
//! selective attention as one self-contained layer.
//!
//! Forward pipeline for input activations `V`:
//!
//! ```text
//! Q = maxpool(V)                          condensation
//! K = pointwise(relu(grouped_conv(Q)))    two-layer embedding
//! A = sigmoid(unpool(K))                  expansion to V's spatial dims
//! V' = A .* (S*V + (1-S))                 selective attention, S = sigmoid(scale_logit)
//! ```
//!
//! The selective-attention form keeps `V'` a product of `V`, `A`, and `S`
//! with the exact limit `V' == A` at `S = 0` and `V' == A .* V` at `S = 1`.
//! `S` is a single learnable scalar per condenser, kept in (0, 1) via the
//! sigmoid parameterization.

use crate::error::{Error, Result};
use crate::ops::{
    conv2d, conv2d_backward, maxpool2d, maxpool2d_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, sigmoid_scalar, unpool_replicate, unpool_replicate_backward, unpool_switch,
    unpool_switch_backward, ConvParams, Padding, PoolRecord,
};
use crate::tensor::{Fill, Rng, Tensor};

/// How the expansion layer projects the embedding back to input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Expansion {
    /// Replication unpooling (default): the attention map stays dense.
    #[default]
    Replicate,
    /// Switch unpooling: embedding values land on the pool argmax positions,
    /// zeros elsewhere. Kept for experimentation.
    Switch,
}

/// Parameter bundle for one condenser.
#[derive(Debug, Clone)]
pub struct AttentionCondenser {
    pub pool_window: (usize, usize),
    pub pool_stride: (usize, usize),
    /// Grouped 3x3 same-padding conv, `c1` output channels.
    pub embed1: ConvParams,
    /// Pointwise conv; output channels must equal the condenser's input
    /// channels so the attention map matches `V`.
    pub embed2: ConvParams,
    /// `S = sigmoid(scale_logit)`.
    pub scale_logit: f64,
    pub expansion: Expansion,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct CondenserCache {
    input: Tensor,
    pool: PoolRecord,
    embed1_pre: Tensor,
    embed1_act: Tensor,
    attention: Tensor,
    scale: f64,
}

impl CondenserCache {
    pub fn attention(&self) -> &Tensor {
        &self.attention
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Gradients for every parameter of one condenser.
#[derive(Debug, Clone)]
pub struct CondenserGrads {
    pub embed1_weights: Tensor,
    pub embed1_bias: Vec<f64>,
    pub embed2_weights: Tensor,
    pub embed2_bias: Vec<f64>,
    pub scale_logit: f64,
}

/// Largest group count <= 4 that divides both channel counts.
pub fn default_groups(in_channels: usize, embed_channels: usize) -> usize {
    let mut g = 1;
    for cand in 2..=4 {
        if in_channels % cand == 0 && embed_channels % cand == 0 {
            g = cand;
        }
    }
    g
}

impl AttentionCondenser {
    /// Builds a condenser with He-initialized embedding weights and
    /// `scale_logit = 0` (`S = 0.5`).
    pub fn new(
        in_channels: usize,
        embed1_channels: usize,
        embed2_channels: usize,
        pool_window: (usize, usize),
        pool_stride: (usize, usize),
        groups: usize,
        rng: &mut Rng,
    ) -> Result<AttentionCondenser> {
        if embed2_channels != in_channels {
            return Err(Error::Config(format!(
                "condenser embed2 channels {} must equal input channels {}",
                embed2_channels, in_channels
            )));
        }
        if groups == 0 || in_channels % groups != 0 || embed1_channels % groups != 0 {
            return Err(Error::Config(format!(
                "groups {} must divide input channels {} and embed channels {}",
                groups, in_channels, embed1_channels
            )));
        }
        let k = 3;
        let fan1 = (in_channels / groups) * k * k;
        let embed1 = ConvParams {
            weights: Tensor::filled(
                [embed1_channels, in_channels / groups, k, k],
                Fill::HeNormal { fan_in: fan1, rng },
            )?,
            bias: vec![0.0; embed1_channels],
            groups,
            stride: (1, 1),
            padding: Padding::Same,
        };
        let embed2 = ConvParams {
            weights: Tensor::filled(
                [embed2_channels, embed1_channels, 1, 1],
                Fill::HeNormal {
                    fan_in: embed1_channels,
                    rng,
                },
            )?,
            bias: vec![0.0; embed2_channels],
            groups: 1,
            stride: (1, 1),
            padding: Padding::Valid,
        };
        Ok(AttentionCondenser {
            pool_window,
            pool_stride,
            embed1,
            embed2,
            scale_logit: 0.0,
            expansion: Expansion::Replicate,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.embed2.out_channels()
    }
}

/// `V' = A .* (S*V + (1-S))`.
///
/// `S = 0` returns `A` exactly; `S = 1` returns `A .* V`; in between `V'`
/// moves continuously and monotonically with `S` per element.
pub fn selective_attention(v: &Tensor, a: &Tensor, s: f64) -> Result<Tensor> {
    if v.shape() != a.shape() {
        return Err(Error::Shape(format!(
            "selective attention shapes differ: {:?} vs {:?}",
            v.shape(),
            a.shape()
        )));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Config(format!("scale {} outside [0, 1]", s)));
    }
    let one_minus = 1.0 - s;
    let data = v
        .data()
        .iter()
        .zip(a.data())
        .map(|(&vi, &ai)| ai * (s * vi + one_minus))
        .collect();
    Tensor::from_vec(v.shape(), data)
}

/// Runs the full condenser. Output shape equals input shape.
pub fn condenser_forward(
    v: &Tensor,
    p: &AttentionCondenser,
) -> Result<(Tensor, CondenserCache)> {
    let [_, c, h, w] = v.shape();
    if c != p.in_channels() {
        return Err(Error::Shape(format!(
            "condenser expects {} channels, got {}",
            p.in_channels(),
            c
        )));
    }
    let pool = maxpool2d(v, p.pool_window, p.pool_stride)?;
    let embed1_pre = conv2d(&pool.pooled, &p.embed1)?;
    let embed1_act = relu(&embed1_pre);
    let k = conv2d(&embed1_act, &p.embed2)?;
    let expanded = match p.expansion {
        Expansion::Replicate => unpool_replicate(&k, p.pool_window, p.pool_stride, (h, w))?,
        Expansion::Switch => unpool_switch(&k, &pool)?,
    };
    let attention = sigmoid(&expanded);
    let scale = sigmoid_scalar(p.scale_logit);
    let out = selective_attention(v, &attention, scale)?;
    Ok((
        out,
        CondenserCache {
            input: v.clone(),
            pool,
            embed1_pre,
            embed1_act,
            attention,
            scale,
        },
    ))
}

/// Exact gradients through selective attention, expansion, embedding, and
/// condensation. Returns the input gradient and all parameter gradients.
pub fn condenser_backward(
    p: &AttentionCondenser,
    cache: &CondenserCache,
    grad_out: &Tensor,
) -> Result<(Tensor, CondenserGrads)> {
    if grad_out.shape() != cache.input.shape() {
        return Err(Error::Shape(format!(
            "condenser grad shape {:?} != forward shape {:?}",
            grad_out.shape(),
            cache.input.shape()
        )));
    }
    let s = cache.scale;
    let v = &cache.input;
    let a = &cache.attention;

    // V' = A .* B with B = S*V + (1-S)
    let mut grad_a = Tensor::zeros(v.shape());
    let mut grad_v = Tensor::zeros(v.shape());
    let mut grad_s = 0.0;
    {
        let ga = grad_a.data_mut();
        let gv = grad_v.data_mut();
        for (i, &g) in grad_out.data().iter().enumerate() {
            let vi = v.data()[i];
            let ai = a.data()[i];
            ga[i] = g * (s * vi + (1.0 - s));
            gv[i] = g * ai * s;
            grad_s += g * ai * (vi - 1.0);
        }
    }
    let grad_scale_logit = grad_s * s * (1.0 - s);

    let grad_expanded = sigmoid_backward(a, &grad_a);
    let k_shape = {
        let ps = cache.pool.pooled.shape();
        [ps[0], p.embed2.out_channels(), ps[2], ps[3]]
    };
    let grad_k = match p.expansion {
        Expansion::Replicate => {
            unpool_replicate_backward(&grad_expanded, p.pool_window, p.pool_stride, k_shape)?
        }
        Expansion::Switch => unpool_switch_backward(&grad_expanded, &cache.pool)?,
    };
    let (grad_embed1_act, embed2_weights, embed2_bias) =
        conv2d_backward(&cache.embed1_act, &p.embed2, &grad_k)?;
    let grad_embed1_pre = relu_backward(&cache.embed1_pre, &grad_embed1_act);
    let (grad_q, embed1_weights, embed1_bias) =
        conv2d_backward(&cache.pool.pooled, &p.embed1, &grad_embed1_pre)?;
    let grad_v_pool = maxpool2d_backward(&cache.pool, &grad_q)?;
    let grad_v = grad_v.add(&grad_v_pool)?;

    Ok((
        grad_v,
        CondenserGrads {
            embed1_weights,
            embed1_bias,
            embed2_weights,
            embed2_bias,
            scale_logit: grad_scale_logit,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_condenser(channels: usize, c1: usize, rng: &mut Rng) -> AttentionCondenser {
        AttentionCondenser::new(
            channels,
            c1,
            channels,
            (2, 2),
            (2, 2),
            default_groups(channels, c1),
            rng,
        )
        .unwrap()
    }

    #[test]
    fn selective_attention_limits() {
        let v = Tensor::from_vec([1, 1, 1, 2], vec![2.0, -3.0]).unwrap();
        let a = Tensor::from_vec([1, 1, 1, 2], vec![0.3, 0.9]).unwrap();
        assert_eq!(selective_attention(&v, &a, 0.0).unwrap(), a);
        let full = selective_attention(&v, &a, 1.0).unwrap();
        assert_eq!(full.data(), &[0.6, -2.7]);
    }

    #[test]
    fn selective_attention_midpoint() {
        let v = Tensor::from_vec([1, 1, 1, 1], vec![4.0]).unwrap();
        let a = Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        let out = selective_attention(&v, &a, 0.5).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn selective_attention_validates() {
        let v = Tensor::zeros([1, 1, 1, 2]);
        let a = Tensor::zeros([1, 1, 2, 1]);
        assert!(selective_attention(&v, &a, 0.5).is_err());
        let a = Tensor::zeros([1, 1, 1, 2]);
        assert!(selective_attention(&v, &a, 1.5).is_err());
    }

    #[test]
    fn zero_embedding_closed_form() {
        // all-zero embedding weights/biases make A = sigmoid(0) = 0.5
        // everywhere, so V' = 0.5 * (s*V + (1-s)).
        let mut rng = Rng::new(9);
        let mut p = test_condenser(2, 4, &mut rng);
        p.embed1.weights = Tensor::zeros(p.embed1.weights.shape());
        p.embed2.weights = Tensor::zeros(p.embed2.weights.shape());
        p.scale_logit = 0.7;
        let s = sigmoid_scalar(0.7);
        let v = Tensor::filled(
            [1, 2, 4, 4],
            Fill::Uniform {
                lo: -2.0,
                hi: 2.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let (out, _) = condenser_forward(&v, &p).unwrap();
        for (o, vi) in out.data().iter().zip(v.data()) {
            assert!((o - 0.5 * (s * vi + (1.0 - s))).abs() < 1e-15);
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = Rng::new(4);
        let p = test_condenser(7, 14, &mut rng);
        let v = Tensor::filled(
            [1, 7, 14, 10],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let (out, _) = condenser_forward(&v, &p).unwrap();
        assert_eq!(out.shape(), [1, 7, 14, 10]);
    }

    #[test]
    fn attention_map_in_open_unit_interval() {
        let mut rng = Rng::new(21);
        let p = test_condenser(3, 6, &mut rng);
        let v = Tensor::filled(
            [2, 3, 6, 6],
            Fill::Uniform {
                lo: -4.0,
                hi: 4.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let (_, cache) = condenser_forward(&v, &p).unwrap();
        assert!(cache
            .attention()
            .data()
            .iter()
            .all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn scale_limit_is_bitwise() {
        let mut rng = Rng::new(33);
        let mut p = test_condenser(2, 4, &mut rng);
        let v = Tensor::filled(
            [1, 2, 5, 5],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        p.scale_logit = f64::NEG_INFINITY; // S clamps to exactly 0
        let (out, cache) = condenser_forward(&v, &p).unwrap();
        assert_eq!(cache.scale(), 0.0);
        assert_eq!(out.data(), cache.attention().data());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = Rng::new(1);
        let p = test_condenser(2, 4, &mut rng);
        let v = Tensor::zeros([1, 3, 4, 4]);
        assert!(condenser_forward(&v, &p).is_err());
    }

    #[test]
    fn embed2_channel_constraint_enforced() {
        let mut rng = Rng::new(1);
        assert!(AttentionCondenser::new(4, 8, 5, (2, 2), (2, 2), 1, &mut rng).is_err());
    }

    #[test]
    fn zero_weight_backward_matches_closed_form() {
        // A = 0.5 everywhere and the embedding carries no signal, so
        // grad_V = grad_out * 0.5 * S plus nothing from the pooling path
        // (embedding weights are zero, so no gradient flows back through it).
        let mut rng = Rng::new(2);
        let mut p = test_condenser(2, 4, &mut rng);
        p.embed1.weights = Tensor::zeros(p.embed1.weights.shape());
        p.embed2.weights = Tensor::zeros(p.embed2.weights.shape());
        let v = Tensor::filled(
            [1, 2, 4, 4],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let (_, cache) = condenser_forward(&v, &p).unwrap();
        let s = cache.scale();
        let grad_out = Tensor::filled([1, 2, 4, 4], Fill::Constant(1.0)).unwrap();
        let (grad_v, _) = condenser_backward(&p, &cache, &grad_out).unwrap();
        for g in grad_v.data() {
            assert!((g - 0.5 * s).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(6);
        let p = test_condenser(2, 4, &mut rng);
        let v = Tensor::filled(
            [1, 2, 4, 4],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let (_, cache) = condenser_forward(&v, &p).unwrap();
        let zero = Tensor::zeros([1, 2, 4, 4]);
        let (grad_v, grads) = condenser_backward(&p, &cache, &zero).unwrap();
        assert!(grad_v.data().iter().all(|&g| g == 0.0));
        assert!(grads.embed1_weights.data().iter().all(|&g| g == 0.0));
        assert!(grads.embed2_weights.data().iter().all(|&g| g == 0.0));
        assert_eq!(grads.scale_logit, 0.0);
    }

    #[test]
    fn every_parameter_gets_gradient_on_generic_input() {
        let mut rng = Rng::new(77);
        let p = test_condenser(2, 4, &mut rng);
        let v = Tensor::filled(
            [1, 2, 6, 6],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let (out, cache) = condenser_forward(&v, &p).unwrap();
        let grad_out = Tensor::filled(out.shape(), Fill::Constant(1.0)).unwrap();
        let (_, grads) = condenser_backward(&p, &cache, &grad_out).unwrap();
        assert!(grads.embed1_weights.data().iter().any(|&g| g != 0.0));
        assert!(grads.embed1_bias.iter().any(|&g| g != 0.0));
        assert!(grads.embed2_weights.data().iter().any(|&g| g != 0.0));
        assert!(grads.embed2_bias.iter().any(|&g| g != 0.0));
        assert_ne!(grads.scale_logit, 0.0);
    }

    #[test]
    fn switch_expansion_runs_and_differs() {
        let mut rng = Rng::new(13);
        let mut p = test_condenser(2, 4, &mut rng);
        let v = Tensor::filled(
            [1, 2, 4, 4],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let (rep, _) = condenser_forward(&v, &p).unwrap();
        p.expansion = Expansion::Switch;
        let (sw, _) = condenser_forward(&v, &p).unwrap();
        assert_eq!(sw.shape(), rep.shape());
        assert_ne!(sw.data(), rep.data());
    }

    #[test]
    fn default_groups_bounded_divisor() {
        assert_eq!(default_groups(8, 16), 4);
        assert_eq!(default_groups(6, 9), 3);
        assert_eq!(default_groups(7, 14), 1);
        assert_eq!(default_groups(2, 4), 2);
    }
}
