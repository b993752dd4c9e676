//! Elementwise nonlinearities.

use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient routed where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape(), grad_out.shape());
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("relu backward shape")
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Takes the forward *output* `y`; gradient is `y * (1 - y) * grad`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(y.shape(), grad_out.shape());
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&yi, &g)| yi * (1.0 - yi) * g)
        .collect();
    Tensor::from_vec(y.shape(), data).expect("sigmoid backward shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn relu_backward_masks() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::from_vec([1, 1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_limits() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert_eq!(sigmoid_scalar(f64::NEG_INFINITY), 0.0);
        assert_eq!(sigmoid_scalar(f64::INFINITY), 1.0);
        assert!(sigmoid_scalar(-1000.0).is_finite());
    }

    #[test]
    fn sigmoid_symmetry() {
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let x = rng.uniform(-8.0, 8.0);
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
