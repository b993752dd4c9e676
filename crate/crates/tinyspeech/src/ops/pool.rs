//! Max pooling with recorded argmax, replication unpooling, and global
//! average pooling.
//!
//! Pooling uses floor division: trailing rows/columns that do not fill a
//! window are dropped. Unpooling covers them anyway by assigning every output
//! position to its nearest region, so a pool/unpool pair preserves spatial
//! dimensions.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output of [`maxpool2d`]: pooled values plus the flat input index of each
/// region maximum (ties broken by lowest flat index).
#[derive(Debug, Clone)]
pub struct PoolRecord {
    pub pooled: Tensor,
    pub argmax: Vec<usize>,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub input_shape: [usize; 4],
}

pub fn maxpool2d(x: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Result<PoolRecord> {
    let (kh, kw) = window;
    let (sh, sw) = stride;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(Error::Shape("pool window and stride must be >= 1".into()));
    }
    let [n_batch, c, h, w] = x.shape();
    if kh > h || kw > w {
        return Err(Error::Shape(format!(
            "pool window {}x{} exceeds input {}x{}",
            kh, kw, h, w
        )));
    }
    let oh = (h - kh) / sh + 1;
    let ow = (w - kw) / sw + 1;
    let mut pooled = Tensor::zeros([n_batch, c, oh, ow]);
    let mut argmax = vec![0usize; pooled.numel()];
    for n in 0..n_batch {
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let idx = x.idx(n, ch, y * sh + dy, xo * sw + dx);
                            let v = x.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let pi = pooled.idx(n, ch, y, xo);
                    pooled.data_mut()[pi] = best;
                    argmax[pi] = best_idx;
                }
            }
        }
    }
    Ok(PoolRecord {
        pooled,
        argmax,
        window,
        stride,
        input_shape: x.shape(),
    })
}

/// Routes `grad_out` (shape of the pooled tensor) back to the argmax
/// positions of the original input.
pub fn maxpool2d_backward(rec: &PoolRecord, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != rec.pooled.shape() {
        return Err(Error::Shape(format!(
            "pool grad shape {:?} != pooled shape {:?}",
            grad_out.shape(),
            rec.pooled.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(rec.input_shape);
    for (i, &src) in rec.argmax.iter().enumerate() {
        grad_in.data_mut()[src] += grad_out.data()[i];
    }
    Ok(grad_in)
}

#[inline]
fn region_of(pos: usize, stride: usize, regions: usize) -> usize {
    (pos / stride).min(regions - 1)
}

/// Replication unpooling: every output position takes the value of its
/// pooling region; positions past the last region take the nearest one.
pub fn unpool_replicate(
    pooled: &Tensor,
    window: (usize, usize),
    stride: (usize, usize),
    out_hw: (usize, usize),
) -> Result<Tensor> {
    let [n_batch, c, ph, pw] = pooled.shape();
    let (h, w) = out_hw;
    check_unpool_geometry(pooled.shape(), window, stride, out_hw)?;
    let mut out = Tensor::zeros([n_batch, c, h, w]);
    for n in 0..n_batch {
        for ch in 0..c {
            for y in 0..h {
                let ry = region_of(y, stride.0, ph);
                for x in 0..w {
                    let rx = region_of(x, stride.1, pw);
                    out.set(n, ch, y, x, pooled.at(n, ch, ry, rx));
                }
            }
        }
    }
    Ok(out)
}

/// Backward of [`unpool_replicate`]: sums `grad_out` over each region.
pub fn unpool_replicate_backward(
    grad_out: &Tensor,
    window: (usize, usize),
    stride: (usize, usize),
    pooled_shape: [usize; 4],
) -> Result<Tensor> {
    let [n_batch, c, h, w] = grad_out.shape();
    check_unpool_geometry(pooled_shape, window, stride, (h, w))?;
    let [pn, pc, ph, pw] = pooled_shape;
    if pn != n_batch || pc != c {
        return Err(Error::Shape("unpool backward batch/channel mismatch".into()));
    }
    let mut grad_pooled = Tensor::zeros(pooled_shape);
    for n in 0..n_batch {
        for ch in 0..c {
            for y in 0..h {
                let ry = region_of(y, stride.0, ph);
                for x in 0..w {
                    let rx = region_of(x, stride.1, pw);
                    let pi = grad_pooled.idx(n, ch, ry, rx);
                    grad_pooled.data_mut()[pi] += grad_out.at(n, ch, y, x);
                }
            }
        }
    }
    Ok(grad_pooled)
}

fn check_unpool_geometry(
    pooled_shape: [usize; 4],
    window: (usize, usize),
    stride: (usize, usize),
    out_hw: (usize, usize),
) -> Result<()> {
    let (kh, kw) = window;
    let (sh, sw) = stride;
    let (h, w) = out_hw;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(Error::Shape("unpool window and stride must be >= 1".into()));
    }
    let expect_h = if h >= kh { (h - kh) / sh + 1 } else { 0 };
    let expect_w = if w >= kw { (w - kw) / sw + 1 } else { 0 };
    if pooled_shape[2] != expect_h || pooled_shape[3] != expect_w || expect_h == 0 || expect_w == 0
    {
        return Err(Error::Shape(format!(
            "unpool geometry inconsistent: pooled {}x{} vs expected {}x{} for output {}x{}",
            pooled_shape[2], pooled_shape[3], expect_h, expect_w, h, w
        )));
    }
    Ok(())
}

/// Switch unpooling: pooled values return to their recorded argmax
/// positions, everything else is zero.
pub fn unpool_switch(pooled: &Tensor, rec: &PoolRecord) -> Result<Tensor> {
    if pooled.shape() != rec.pooled.shape() {
        return Err(Error::Shape(format!(
            "switch unpool shape {:?} != pool record {:?}",
            pooled.shape(),
            rec.pooled.shape()
        )));
    }
    let mut out = Tensor::zeros(rec.input_shape);
    for (i, &dst) in rec.argmax.iter().enumerate() {
        out.data_mut()[dst] = pooled.data()[i];
    }
    Ok(out)
}

/// Backward of [`unpool_switch`]: gathers gradient from the argmax positions.
pub fn unpool_switch_backward(grad_out: &Tensor, rec: &PoolRecord) -> Result<Tensor> {
    if grad_out.shape() != rec.input_shape {
        return Err(Error::Shape(format!(
            "switch unpool grad shape {:?} != input shape {:?}",
            grad_out.shape(),
            rec.input_shape
        )));
    }
    let mut grad_pooled = Tensor::zeros(rec.pooled.shape());
    for (i, &src) in rec.argmax.iter().enumerate() {
        grad_pooled.data_mut()[i] = grad_out.data()[src];
    }
    Ok(grad_pooled)
}

/// Mean over the spatial dims, producing `(N, C, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n_batch, c, h, w] = x.shape();
    let scale = 1.0 / (h * w) as f64;
    let mut out = Tensor::zeros([n_batch, c, 1, 1]);
    for n in 0..n_batch {
        for ch in 0..c {
            let mut acc = 0.0;
            for y in 0..h {
                for xo in 0..w {
                    acc += x.at(n, ch, y, xo);
                }
            }
            out.set(n, ch, 0, 0, acc * scale);
        }
    }
    out
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: [usize; 4]) -> Result<Tensor> {
    let [n_batch, c, h, w] = input_shape;
    if grad_out.shape() != [n_batch, c, 1, 1] {
        return Err(Error::Shape(format!(
            "gap grad shape {:?} != ({}, {}, 1, 1)",
            grad_out.shape(),
            n_batch,
            c
        )));
    }
    let scale = 1.0 / (h * w) as f64;
    let mut grad_in = Tensor::zeros(input_shape);
    for n in 0..n_batch {
        for ch in 0..c {
            let g = grad_out.at(n, ch, 0, 0) * scale;
            for y in 0..h {
                for xo in 0..w {
                    grad_in.set(n, ch, y, xo, g);
                }
            }
        }
    }
    Ok(grad_in)
}
