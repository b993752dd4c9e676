//! Fully-connected layer.

use crate::error::{Error, Result};

/// Weights are row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone)]
pub struct DenseParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseParams {
    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::Shape(format!(
                "dense weights length {} != {}x{}",
                self.weights.len(),
                self.out_dim,
                self.in_dim
            )));
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::Shape(format!(
                "dense bias length {} != out dim {}",
                self.bias.len(),
                self.out_dim
            )));
        }
        Ok(())
    }
}

/// `y = Wx + b`.
pub fn dense(x: &[f64], p: &DenseParams) -> Result<Vec<f64>> {
    p.validate()?;
    if x.len() != p.in_dim {
        return Err(Error::Shape(format!(
            "dense expects input length {}, got {}",
            p.in_dim,
            x.len()
        )));
    }
    let mut y = p.bias.clone();
    for (row, yo) in y.iter_mut().enumerate() {
        let w_row = &p.weights[row * p.in_dim..(row + 1) * p.in_dim];
        *yo += w_row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
    }
    Ok(y)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward(
    x: &[f64],
    p: &DenseParams,
    grad_y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    p.validate()?;
    if x.len() != p.in_dim || grad_y.len() != p.out_dim {
        return Err(Error::Shape("dense backward dimension mismatch".into()));
    }
    let mut grad_x = vec![0.0; p.in_dim];
    let mut grad_w = vec![0.0; p.weights.len()];
    for row in 0..p.out_dim {
        let g = grad_y[row];
        let base = row * p.in_dim;
        for col in 0..p.in_dim {
            grad_w[base + col] = g * x[col];
            grad_x[col] += g * p.weights[base + col];
        }
    }
    Ok((grad_x, grad_w, grad_y.to_vec()))
}
