//! Shared test oracles. Everything here is an independent reference path:
//! brute-force loops and textbook formulas, never the implementation under
//! test.

#![allow(dead_code)]

use tinyspeech::tensor::{Rng, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Relative error with a floor so near-zero coordinates compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Central finite difference of `loss` with respect to one coordinate of a
/// parameter vector accessed through `get`/`set`.
pub fn central_diff(mut eval: impl FnMut(f64) -> f64, x0: f64) -> f64 {
    let fp = eval(x0 + FD_STEP);
    let fm = eval(x0 - FD_STEP);
    (fp - fm) / (2.0 * FD_STEP)
}

/// Checks every coordinate of `analytic` against central differences of
/// `loss_at`, which evaluates the scalar loss with coordinate `i` of the
/// checked vector set to the given value.
pub fn check_grad_vector(
    label: &str,
    base: &[f64],
    analytic: &[f64],
    mut loss_at: impl FnMut(usize, f64) -> f64,
) {
    assert_eq!(base.len(), analytic.len(), "{label}: gradient length");
    for i in 0..base.len() {
        let numeric = central_diff(|v| loss_at(i, v), base[i]);
        let err = rel_err(analytic[i], numeric);
        assert!(
            err < GRAD_TOL,
            "{label}[{i}]: analytic {} vs numeric {} (rel err {err})",
            analytic[i],
            numeric
        );
    }
}

/// Fixed random probe so a tensor-valued output becomes a scalar loss
/// `sum(w .* out)` with gradient `w`.
pub fn probe(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn random_tensor(shape: [usize; 4], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.uniform(lo, hi))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Brute-force grouped cross-correlation with explicit zero padding.
/// Returns the output and the number of multiply-accumulates performed.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    groups: usize,
    stride: (usize, usize),
    pad: (usize, usize, usize, usize), // top, bottom, left, right
) -> (Tensor, u64) {
    let [n_batch, c_in, h, w] = x.shape();
    let [c_out, cpg_in, kh, kw] = weights.shape();
    assert_eq!(cpg_in, c_in / groups);
    let (pt, pb, pl, pr) = pad;
    let (ph, pw) = (h + pt + pb, w + pl + pr);

    // materialize the padded input
    let mut padded = Tensor::zeros([n_batch, c_in, ph, pw]);
    for n in 0..n_batch {
        for c in 0..c_in {
            for y in 0..h {
                for xx in 0..w {
                    padded.set(n, c, y + pt, xx + pl, x.at(n, c, y, xx));
                }
            }
        }
    }

    let oh = (ph - kh) / stride.0 + 1;
    let ow = (pw - kw) / stride.1 + 1;
    let cpg_out = c_out / groups;
    let mut out = Tensor::zeros([n_batch, c_out, oh, ow]);
    let mut macs = 0u64;
    for n in 0..n_batch {
        for co in 0..c_out {
            let g = co / cpg_out;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cpg_in {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                acc += weights.at(co, ci, dy, dx)
                                    * padded.at(
                                        n,
                                        g * cpg_in + ci,
                                        y * stride.0 + dy,
                                        xx * stride.1 + dx,
                                    );
                                macs += 1;
                            }
                        }
                    }
                    out.set(n, co, y, xx, acc);
                }
            }
        }
    }
    (out, macs)
}

/// O(n^2) real DFT power spectrum, written straight from the definition.
pub fn naive_power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_fft / 2 + 1);
    for k in 0..=n_fft / 2 {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for n in 0..n_fft {
            let x = if n < frame.len() { frame[n] } else { 0.0 };
            let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / n_fft as f64;
            re += x * ang.cos();
            im += x * ang.sin();
        }
        out.push(re * re + im * im);
    }
    out
}

/// Straight-line MFCC reference: framing, Hamming, naive DFT, triangular
/// mel filters on [20, 4000] Hz, log floor 1e-10, orthonormal DCT-II.
/// Written independently of the dsp module against the same definition.
pub fn reference_mfcc(signal: &[f64]) -> Vec<Vec<f64>> {
    let (sr, win, hop, n_fft, n_mels) = (16_000usize, 480usize, 160usize, 512usize, 40usize);
    let (fmin, fmax) = (20.0f64, 4000.0f64);
    let mut sig = signal.to_vec();
    sig.resize(sr, 0.0);

    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let imel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| imel(mel(fmin) + (mel(fmax) - mel(fmin)) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let n_frames = (sr - win) / hop + 1;
    let mut rows = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut frame: Vec<f64> = (0..win)
            .map(|i| {
                sig[f * hop + i]
                    * (0.54
                        - 0.46
                            * (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos())
            })
            .collect();
        frame.resize(n_fft, 0.0);
        let power = naive_power_spectrum(&frame, n_fft);

        let mut logmel = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut e = 0.0;
            for (k, &p) in power.iter().enumerate() {
                let freq = k as f64 * sr as f64 / n_fft as f64;
                if freq < fmin || freq > fmax {
                    continue;
                }
                let weight = (((freq - l) / (c - l)).min((r - freq) / (r - c))).max(0.0);
                e += weight * p;
            }
            logmel.push(e.max(1e-10).ln());
        }

        let mut coeffs = Vec::with_capacity(n_mels);
        for k in 0..n_mels {
            let mut acc = 0.0;
            for (n, &x) in logmel.iter().enumerate() {
                acc += x
                    * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64
                        / (2 * n_mels) as f64)
                        .cos();
            }
            let a = if k == 0 {
                (1.0 / n_mels as f64).sqrt()
            } else {
                (2.0 / n_mels as f64).sqrt()
            };
            coeffs.push(a * acc);
        }
        rows.push(coeffs);
    }
    rows
}
