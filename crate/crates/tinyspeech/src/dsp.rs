//! MFCC feature frontend.
//!
//! One second of 16 kHz mono audio becomes a 98x40 time-by-coefficient
//! stack: 30 ms Hamming windows at a 10 ms hop, power spectrum, a
//! 40-filter mel filterbank restricted to the 20 Hz - 4 kHz band (the
//! band-pass lives in the filterbank edges), log with a 1e-10 floor, and an
//! orthonormal DCT-II. No pre-emphasis is applied.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub fmin: f64,
    pub fmax: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            window_ms: 30,
            hop_ms: 10,
            fmin: 20.0,
            fmax: 4_000.0,
            n_fft: 512,
            n_mels: 40,
            n_mfcc: 40,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate as usize * self.window_ms as usize) / 1000
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as usize * self.hop_ms as usize) / 1000
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Dsp(format!(
                "need fmin < fmax <= nyquist, got [{}, {}] at {} Hz",
                self.fmin, self.fmax, self.sample_rate
            )));
        }
        if self.n_mfcc > self.n_mels {
            return Err(Error::Dsp(format!(
                "n_mfcc {} exceeds n_mels {}",
                self.n_mfcc, self.n_mels
            )));
        }
        if self.window_samples() > self.n_fft {
            return Err(Error::Dsp(format!(
                "window of {} samples exceeds n_fft {}",
                self.window_samples(),
                self.n_fft
            )));
        }
        if self.window_samples() == 0 || self.hop_samples() == 0 {
            return Err(Error::Dsp("window and hop must be nonzero".into()));
        }
        Ok(())
    }
}

/// Time-by-coefficient feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccStack {
    pub frames: usize,
    pub coeffs: usize,
    pub data: Vec<f64>,
    pub source_len: usize,
}

impl MfccStack {
    pub fn at(&self, frame: usize, coeff: usize) -> f64 {
        self.data[frame * self.coeffs + coeff]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.coeffs..(frame + 1) * self.coeffs]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn hamming(n: usize, len: usize) -> f64 {
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
}

/// Splits the signal into Hamming-windowed frames (no padding: the signal
/// must cover at least one window; trailing samples short of a window are
/// dropped).
pub fn frame_signal(signal: &[f64], cfg: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    if signal.len() < win {
        return Err(Error::Dsp(format!(
            "signal of {} samples shorter than one {}-sample window",
            signal.len(),
            win
        )));
    }
    let n_frames = (signal.len() - win) / hop + 1;
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * hop;
        let frame = signal[start..start + win]
            .iter()
            .enumerate()
            .map(|(i, &s)| s * hamming(i, win))
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

/// `|DFT|^2` of the (windowed) frame zero-padded to `n_fft`; returns the
/// `n_fft/2 + 1` non-negative-frequency bins.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    if frame.len() > n_fft {
        return Err(Error::Dsp(format!(
            "frame of {} samples exceeds n_fft {}",
            frame.len(),
            n_fft
        )));
    }
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(n_fft, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    Ok(buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect())
}

/// Triangular mel filterbank, `n_mels` rows of `n_fft/2 + 1` weights.
/// Edges are uniform on the mel scale between `mel(fmin)` and `mel(fmax)`;
/// every bin outside `[fmin, fmax]` has exactly zero weight.
pub fn mel_filterbank(cfg: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let n_bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut bank = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut row = vec![0.0; n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f < cfg.fmin || f > cfg.fmax {
                continue; // band-pass: hard zero outside the cutoffs
            }
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Dsp(format!(
                "degenerate filterbank: filter {m} has no support (too many \
                 filters for n_fft {})",
                cfg.n_fft
            )));
        }
        bank.push(row);
    }
    Ok(bank)
}

/// Orthonormal DCT-II of `x`, first `n_out` coefficients.
pub fn dct_ii_orthonormal(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            acc += xi
                * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
        let a = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        out.push(a * acc);
    }
    out
}

/// Full pipeline for one clip. Shorter signals are zero-padded at the end to
/// one second, longer ones truncated; with the default config the result is
/// a 98x40 stack.
pub fn mfcc_stack(signal: &[f64], cfg: &FrontendConfig) -> Result<MfccStack> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(Error::Dsp("empty signal".into()));
    }
    let target = cfg.sample_rate as usize;
    let mut padded;
    let signal = if signal.len() == target {
        signal
    } else {
        padded = signal.to_vec();
        padded.resize(target, 0.0);
        &padded
    };

    let frames = frame_signal(signal, cfg)?;
    let bank = mel_filterbank(cfg)?;
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;

    let mut data = Vec::with_capacity(frames.len() * cfg.n_mfcc);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for frame in &frames {
        for (slot, &s) in buf.iter_mut().zip(frame.iter()) {
            *slot = Complex::new(s, 0.0);
        }
        for slot in buf.iter_mut().skip(frame.len()) {
            *slot = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> = bank
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(1e-10).ln()
            })
            .collect();
        data.extend(dct_ii_orthonormal(&log_mel, cfg.n_mfcc));
    }
    Ok(MfccStack {
        frames: frames.len(),
        coeffs: cfg.n_mfcc,
        data,
        source_len: signal.len(),
    })
}
