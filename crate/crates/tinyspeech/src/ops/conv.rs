//! 2-D cross-correlation with groups, stride, and valid/same zero padding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Zero padding sized so the output is `ceil(in/stride)`, with the total
    /// split floor-left / ceil-right.
    Same,
}

/// Parameters of one convolution: weights `(C_out, C_in/groups, kH, kW)`,
/// per-output-channel bias, group count, stride, padding.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub groups: usize,
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl ConvParams {
    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1] * self.groups
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weights.shape();
        (s[2], s[3])
    }

    fn validate(&self) -> Result<()> {
        let c_out = self.out_channels();
        if self.groups == 0 {
            return Err(Error::Shape("conv groups must be >= 1".into()));
        }
        if c_out % self.groups != 0 {
            return Err(Error::Shape(format!(
                "out channels {} not divisible by groups {}",
                c_out, self.groups
            )));
        }
        if self.bias.len() != c_out {
            return Err(Error::Shape(format!(
                "bias length {} != out channels {}",
                self.bias.len(),
                c_out
            )));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Shape("conv stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Padding amounts (top, bottom, left, right) and output dims for an input.
pub(crate) fn conv_geometry(
    in_hw: (usize, usize),
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
) -> Result<((usize, usize, usize, usize), (usize, usize))> {
    let (h, w) = in_hw;
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    match padding {
        Padding::Valid => {
            if kh > h || kw > w {
                return Err(Error::Shape(format!(
                    "kernel {}x{} larger than input {}x{}",
                    kh, kw, h, w
                )));
            }
            Ok(((0, 0, 0, 0), ((h - kh) / sh + 1, (w - kw) / sw + 1)))
        }
        Padding::Same => {
            let oh = h.div_ceil(sh);
            let ow = w.div_ceil(sw);
            let pad_h = ((oh - 1) * sh + kh).saturating_sub(h);
            let pad_w = ((ow - 1) * sw + kw).saturating_sub(w);
            let pt = pad_h / 2;
            let pl = pad_w / 2;
            Ok(((pt, pad_h - pt, pl, pad_w - pl), (oh, ow)))
        }
    }
}

/// Cross-correlation of `x` `(N, C_in, H, W)` with the given parameters.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.validate()?;
    let [n_batch, c_in, h, w] = x.shape();
    if c_in != p.in_channels() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            p.in_channels(),
            c_in
        )));
    }
    let (kh, kw) = p.kernel();
    let (sh, sw) = p.stride;
    let ((pt, _, pl, _), (oh, ow)) = conv_geometry((h, w), (kh, kw), p.stride, p.padding)?;
    let c_out = p.out_channels();
    let cpg_in = c_in / p.groups; // channels per group, input side
    let cpg_out = c_out / p.groups;

    let mut out = Tensor::zeros([n_batch, c_out, oh, ow]);
    for n in 0..n_batch {
        for co in 0..c_out {
            let g = co / cpg_out;
            let ci_base = g * cpg_in;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = p.bias[co];
                    for ci in 0..cpg_in {
                        for dy in 0..kh {
                            let ih = y * sh + dy;
                            if ih < pt || ih - pt >= h {
                                continue;
                            }
                            for dx in 0..kw {
                                let iw = xo * sw + dx;
                                if iw < pl || iw - pl >= w {
                                    continue;
                                }
                                acc += p.weights.at(co, ci, dy, dx)
                                    * x.at(n, ci_base + ci, ih - pt, iw - pl);
                            }
                        }
                    }
                    out.set(n, co, y, xo, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weights, and bias.
///
/// `grad_out` must have the forward output's shape.
pub fn conv2d_backward(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    p.validate()?;
    let [n_batch, c_in, h, w] = x.shape();
    let (kh, kw) = p.kernel();
    let (sh, sw) = p.stride;
    let ((pt, _, pl, _), (oh, ow)) = conv_geometry((h, w), (kh, kw), p.stride, p.padding)?;
    let c_out = p.out_channels();
    if grad_out.shape() != [n_batch, c_out, oh, ow] {
        return Err(Error::Shape(format!(
            "conv grad shape {:?} != forward output {:?}",
            grad_out.shape(),
            [n_batch, c_out, oh, ow]
        )));
    }
    let cpg_in = c_in / p.groups;
    let cpg_out = c_out / p.groups;

    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_w = Tensor::zeros(p.weights.shape());
    let mut grad_b = vec![0.0; c_out];
    for n in 0..n_batch {
        for co in 0..c_out {
            let g = co / cpg_out;
            let ci_base = g * cpg_in;
            for y in 0..oh {
                for xo in 0..ow {
                    let go = grad_out.at(n, co, y, xo);
                    grad_b[co] += go;
                    for ci in 0..cpg_in {
                        for dy in 0..kh {
                            let ih = y * sh + dy;
                            if ih < pt || ih - pt >= h {
                                continue;
                            }
                            for dx in 0..kw {
                                let iw = xo * sw + dx;
                                if iw < pl || iw - pl >= w {
                                    continue;
                                }
                                let xi = x.idx(n, ci_base + ci, ih - pt, iw - pl);
                                let wi = grad_w.idx(co, ci, dy, dx);
                                grad_w.data_mut()[wi] += go * x.data()[xi];
                                grad_x.data_mut()[xi] += go * p.weights.at(co, ci, dy, dx);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}
