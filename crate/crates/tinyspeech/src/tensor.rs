//! Dense rank-4 tensor and the deterministic RNG everything else builds on.
//!
//! Layout is fixed `(N, C, H, W)` with row-major data (`N` major, `W` minor):
//! `idx = ((n*C + c)*H + h)*W + w`. For audio features `H` is the time-frame
//! axis and `W` the MFCC-coefficient axis, with a single input channel.
//!
//! Values are `f64`. Public ops are value-semantic: they return new tensors
//! and never mutate their inputs, so shared reads are always safe.

use crate::error::{Error, Result};

/// Dense rank-4 tensor, row-major `(N, C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

/// Initial fill for [`Tensor::filled`].
pub enum Fill<'a> {
    /// Every element set to the given value.
    Constant(f64),
    /// Independent draws from `U[lo, hi)`.
    Uniform { lo: f64, hi: f64, rng: &'a mut Rng },
    /// Draws from `N(0, 2/fan_in)` (He initialization).
    HeNormal { fan_in: usize, rng: &'a mut Rng },
}

impl Tensor {
    /// Creates a tensor with the given shape and fill.
    ///
    /// Fails when the element count `N*C*H*W` overflows `usize`.
    pub fn filled(shape: [usize; 4], fill: Fill<'_>) -> Result<Tensor> {
        let n = checked_numel(shape)?;
        let data = match fill {
            Fill::Constant(v) => vec![v; n],
            Fill::Uniform { lo, hi, rng } => (0..n).map(|_| rng.uniform(lo, hi)).collect(),
            Fill::HeNormal { fan_in, rng } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.normal() * std).collect()
            }
        };
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Tensor {
        Tensor::filled(shape, Fill::Constant(0.0)).expect("zero tensor shape overflow")
    }

    /// Wraps an existing buffer; `data.len()` must equal `N*C*H*W`.
    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Tensor> {
        let n = checked_numel(shape)?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of `(n, c, h, w)`.
    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.idx(n, c, h, w);
        self.data[i] = v;
    }

    /// Elementwise product. `b` must have the same shape as `self`, or be
    /// broadcastable to it (every dim of `b` equal to `self`'s or 1).
    pub fn mul(&self, b: &Tensor) -> Result<Tensor> {
        if self.shape == b.shape {
            let data = self
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| x * y)
                .collect();
            return Ok(Tensor {
                shape: self.shape,
                data,
            });
        }
        for d in 0..4 {
            if b.shape[d] != self.shape[d] && b.shape[d] != 1 {
                return Err(Error::Shape(format!(
                    "cannot broadcast {:?} to {:?}",
                    b.shape, self.shape
                )));
            }
        }
        let [nn, cc, hh, ww] = self.shape;
        let mut out = Tensor::zeros(self.shape);
        for n in 0..nn {
            let bn = if b.shape[0] == 1 { 0 } else { n };
            for c in 0..cc {
                let bc = if b.shape[1] == 1 { 0 } else { c };
                for h in 0..hh {
                    let bh = if b.shape[2] == 1 { 0 } else { h };
                    for w in 0..ww {
                        let bw = if b.shape[3] == 1 { 0 } else { w };
                        let v = self.at(n, c, h, w) * b.at(bn, bc, bh, bw);
                        out.set(n, c, h, w, v);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, b: &Tensor) -> Result<Tensor> {
        if self.shape != b.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape, b.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| x + y)
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// Same flat data reinterpreted under a new shape with equal element count.
    pub fn reshape(&self, shape: [usize; 4]) -> Result<Tensor> {
        let n = checked_numel(shape)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?}: element count {} != {}",
                self.shape,
                shape,
                self.data.len(),
                n
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Rounds every element through `f32` precision. Used by the 32-bit
    /// inference path.
    pub fn round_to_f32(&self) -> Tensor {
        self.map(|x| x as f32 as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn checked_numel(shape: [usize; 4]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape(format!("element count of {:?} overflows usize", shape)))
}

/// Deterministic 64-bit PRNG (splitmix64).
///
/// The stream is a pure function of the seed: integer state updates plus a
/// fixed bit mapping to floats, so identical seeds give byte-identical
/// tensors on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { state: seed }
    }

    /// splitmix64 step.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; safe under `ln`.
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_fill_exact() {
        let t = Tensor::filled([1, 1, 2, 2], Fill::Constant(0.0)).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0]);
        let t = Tensor::filled([1, 1, 1, 1], Fill::Constant(7.0)).unwrap();
        assert_eq!(t.data(), &[7.0]);
    }

    #[test]
    fn seeded_fill_reproduces() {
        let mut r1 = Rng::new(42);
        let mut r2 = Rng::new(42);
        let a = Tensor::filled(
            [1, 2, 2, 2],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                rng: &mut r1,
            },
        )
        .unwrap();
        let b = Tensor::filled(
            [1, 2, 2, 2],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                rng: &mut r2,
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.all_finite());
    }

    #[test]
    fn he_normal_is_finite_and_seeded() {
        let mut rng = Rng::new(7);
        let t = Tensor::filled(
            [1, 4, 3, 3],
            Fill::HeNormal {
                fan_in: 9,
                rng: &mut rng,
            },
        )
        .unwrap();
        assert!(t.all_finite());
        let mut rng2 = Rng::new(7);
        let t2 = Tensor::filled(
            [1, 4, 3, 3],
            Fill::HeNormal {
                fan_in: 9,
                rng: &mut rng2,
            },
        )
        .unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn numel_overflow_is_an_error() {
        assert!(Tensor::filled([usize::MAX, 2, 2, 2], Fill::Constant(0.0)).is_err());
    }

    #[test]
    fn mul_same_shape() {
        let a = Tensor::from_vec([1, 1, 1, 2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 2], vec![4.0, 5.0]).unwrap();
        assert_eq!(a.mul(&b).unwrap().data(), &[8.0, 15.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut rng = Rng::new(3);
        let a = Tensor::filled(
            [2, 3, 2, 2],
            Fill::Uniform {
                lo: -5.0,
                hi: 5.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let ones = Tensor::filled([2, 3, 2, 2], Fill::Constant(1.0)).unwrap();
        assert_eq!(a.mul(&ones).unwrap(), a);
    }

    #[test]
    fn mul_broadcasts_per_channel() {
        let a = Tensor::filled([1, 2, 2, 2], Fill::Constant(1.0)).unwrap();
        let b = Tensor::from_vec([1, 2, 1, 1], vec![2.0, 3.0]).unwrap();
        let out = a.mul(&b).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                assert_eq!(out.at(0, 0, h, w), 2.0);
                assert_eq!(out.at(0, 1, h, w), 3.0);
            }
        }
    }

    #[test]
    fn mul_rejects_incompatible() {
        let a = Tensor::zeros([1, 2, 2, 2]);
        let b = Tensor::zeros([1, 3, 1, 1]);
        assert!(a.mul(&b).is_err());
    }

    #[test]
    fn reshape_preserves_order() {
        let t = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = t.reshape([1, 4, 1, 1]).unwrap();
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.shape(), [1, 4, 1, 1]);
        assert_eq!(t.reshape([1, 1, 2, 2]).unwrap(), t);
    }

    #[test]
    fn reshape_rejects_count_mismatch() {
        let t = Tensor::zeros([1, 1, 2, 3]);
        assert!(t.reshape([1, 1, 3, 3]).is_err());
    }

    #[test]
    fn row_major_index_formula() {
        let t = Tensor::from_vec([2, 2, 2, 2], (0..16).map(|i| i as f64).collect()).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                for h in 0..2 {
                    for w in 0..2 {
                        let expect = (((n * 2 + c) * 2 + h) * 2 + w) as f64;
                        assert_eq!(t.at(n, c, h, w), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn rng_streams_match_by_seed() {
        let mut a = Rng::new(123);
        let mut b = Rng::new(123);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::new(124);
        assert_ne!(Rng::new(123).next_u64(), c.next_u64());
    }

    #[test]
    fn rng_f64_in_unit_interval() {
        let mut r = Rng::new(0);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
