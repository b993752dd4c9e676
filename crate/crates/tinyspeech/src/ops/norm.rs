//! Per-channel batch normalization.

use crate::error::{Error, Result};
use crate::ops::RunMode;
use crate::tensor::Tensor;

/// Learnable scale/shift plus running statistics for one channel axis.
///
/// `momentum` is the weight of the fresh batch statistic in the running
/// update: `running = (1 - momentum) * running + momentum * batch`.
#[derive(Debug, Clone)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> BatchNormParams {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What backward needs from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Mode dispatcher over [`batchnorm_infer`] and [`batchnorm_train`].
pub fn batchnorm(
    x: &Tensor,
    p: &mut BatchNormParams,
    mode: RunMode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    match mode {
        RunMode::Infer => Ok((batchnorm_infer(x, p)?, None)),
        RunMode::Train => {
            let (y, cache) = batchnorm_train(x, p)?;
            Ok((y, Some(cache)))
        }
    }
}

/// Deterministic per-channel affine map from the running statistics.
/// Mutates nothing.
pub fn batchnorm_infer(x: &Tensor, p: &BatchNormParams) -> Result<Tensor> {
    let [n_batch, c, h, w] = x.shape();
    if c != p.channels() {
        return Err(Error::Shape(format!(
            "batchnorm expects {} channels, got {}",
            p.channels(),
            c
        )));
    }
    let mut out = Tensor::zeros(x.shape());
    for ch in 0..c {
        let inv = 1.0 / (p.running_var[ch] + p.eps).sqrt();
        let scale = p.gamma[ch] * inv;
        let shift = p.beta[ch] - p.running_mean[ch] * scale;
        for n in 0..n_batch {
            for y in 0..h {
                for xo in 0..w {
                    out.set(n, ch, y, xo, x.at(n, ch, y, xo) * scale + shift);
                }
            }
        }
    }
    Ok(out)
}

/// Normalizes by batch statistics (biased variance over `N*H*W` per channel)
/// and folds them into the running stats.
pub fn batchnorm_train(
    x: &Tensor,
    p: &mut BatchNormParams,
) -> Result<(Tensor, BatchNormCache)> {
    let [n_batch, c, h, w] = x.shape();
    if c != p.channels() {
        return Err(Error::Shape(format!(
            "batchnorm expects {} channels, got {}",
            p.channels(),
            c
        )));
    }
    let m = n_batch * h * w;
    if m == 0 {
        return Err(Error::Shape(
            "batchnorm train mode needs a nonzero batch".into(),
        ));
    }
    let mut out = Tensor::zeros(x.shape());
    let mut x_hat = Tensor::zeros(x.shape());
    let mut inv_std = vec![0.0; c];
    let inv_m = 1.0 / m as f64;
    for ch in 0..c {
        let mut mean = 0.0;
        for n in 0..n_batch {
            for y in 0..h {
                for xo in 0..w {
                    mean += x.at(n, ch, y, xo);
                }
            }
        }
        mean *= inv_m;
        let mut var = 0.0;
        for n in 0..n_batch {
            for y in 0..h {
                for xo in 0..w {
                    let d = x.at(n, ch, y, xo) - mean;
                    var += d * d;
                }
            }
        }
        var *= inv_m;
        let inv = 1.0 / (var + p.eps).sqrt();
        inv_std[ch] = inv;
        for n in 0..n_batch {
            for y in 0..h {
                for xo in 0..w {
                    let xh = (x.at(n, ch, y, xo) - mean) * inv;
                    x_hat.set(n, ch, y, xo, xh);
                    out.set(n, ch, y, xo, p.gamma[ch] * xh + p.beta[ch]);
                }
            }
        }
        p.running_mean[ch] = (1.0 - p.momentum) * p.running_mean[ch] + p.momentum * mean;
        p.running_var[ch] = (1.0 - p.momentum) * p.running_var[ch] + p.momentum * var;
    }
    Ok((out, BatchNormCache { x_hat, inv_std }))
}

/// Train-mode backward through the batch statistics.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    p: &BatchNormParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let [n_batch, c, h, w] = cache.x_hat.shape();
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::Shape(format!(
            "batchnorm grad shape {:?} != cached {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let m = (n_batch * h * w) as f64;
    let mut grad_x = Tensor::zeros(cache.x_hat.shape());
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for n in 0..n_batch {
            for y in 0..h {
                for xo in 0..w {
                    let dy = grad_out.at(n, ch, y, xo);
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.x_hat.at(n, ch, y, xo);
                }
            }
        }
        grad_beta[ch] = sum_dy;
        grad_gamma[ch] = sum_dy_xhat;
        let k = p.gamma[ch] * cache.inv_std[ch];
        for n in 0..n_batch {
            for y in 0..h {
                for xo in 0..w {
                    let dy = grad_out.at(n, ch, y, xo);
                    let xh = cache.x_hat.at(n, ch, y, xo);
                    grad_x.set(n, ch, y, xo, k * (dy - sum_dy / m - xh * sum_dy_xhat / m));
                }
            }
        }
    }
    Ok((grad_x, grad_gamma, grad_beta))
}
