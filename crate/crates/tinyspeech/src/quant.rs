//! Affine weight quantization with quantize-dequantize inference.
//!
//! Codes span the full range of the bit width; the tensor minimum maps to
//! the lowest code and the grid is anchored there:
//!
//! ```text
//! code(x) = clamp(round((x - min) / scale), 0, 2^bits - 1) + zero_point
//! deq(q)  = scale * (q - zero_point) + min
//! ```
//!
//! with `zero_point` the lowest code of the bit width and
//! `scale = (max - min) / (2^bits - 1)`. The range endpoints always land on
//! codes (the rounding never exceeds the grid), so the round-trip error is
//! at most `scale / 2` per element. Scale and min are kept and stored at
//! full `f64` precision so dequantized values survive a file round trip
//! bitwise.

use serde::Serialize;

use crate::complexity::model_size_kbits;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone)]
pub struct QuantizedTensor {
    pub codes: Vec<i8>,
    pub scale: f64,
    pub zero_point: i32,
    pub min: f64,
    pub bits: u32,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes
            .iter()
            .map(|&c| self.scale * (c as i32 - self.zero_point) as f64 + self.min)
            .collect()
    }
}

fn check_bits(bits: u32) -> Result<(f64, i32)> {
    match bits {
        4 | 8 => Ok((((1u64 << bits) - 1) as f64, -(1i32 << (bits - 1)))),
        other => Err(Error::Quant(format!(
            "unsupported quantization width {other}, expected 4 or 8"
        ))),
    }
}

/// Quantizes with the tensor's own min/max as the declared range.
pub fn quantize_tensor(values: &[f64], shape: &[usize], bits: u32) -> Result<QuantizedTensor> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quant("cannot quantize non-finite values".into()));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    quantize_with_range(values, shape, bits, min, max)
}

/// Quantizes against an explicit `[min, max]` range.
pub fn quantize_with_range(
    values: &[f64],
    shape: &[usize],
    bits: u32,
    min: f64,
    max: f64,
) -> Result<QuantizedTensor> {
    let (levels, zero_point) = check_bits(bits)?;
    if values.iter().any(|v| !v.is_finite()) || !min.is_finite() || !max.is_finite() {
        return Err(Error::Quant("cannot quantize non-finite values".into()));
    }
    if shape.iter().product::<usize>() != values.len() {
        return Err(Error::Quant(format!(
            "shape {:?} does not match {} values",
            shape,
            values.len()
        )));
    }
    if max < min {
        return Err(Error::Quant("quantization range has max < min".into()));
    }
    if max == min {
        // degenerate all-equal tensor: every code is the zero point
        return Ok(QuantizedTensor {
            codes: vec![zero_point as i8; values.len()],
            scale: 1.0,
            zero_point,
            min,
            bits,
            shape: shape.to_vec(),
        });
    }
    let mut scale = (max - min) / levels;
    if scale <= 0.0 {
        // range below f64 resolution; treat as degenerate spacing
        scale = f64::MIN_POSITIVE;
    }
    let codes = values
        .iter()
        .map(|&v| {
            let k = ((v - min) / scale).round().clamp(0.0, levels);
            (k as i32 + zero_point) as i8
        })
        .collect();
    Ok(QuantizedTensor {
        codes,
        scale,
        zero_point,
        min,
        bits,
        shape: shape.to_vec(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantizeReport {
    pub weight_bits: u32,
    pub total_params: u64,
    /// All parameters counted at `weight_bits`, matching the size metric.
    pub model_size_kbits: f64,
    pub quantized_tensors: usize,
}

/// Passes every weight tensor through quantize/dequantize in place. Biases,
/// batch-norm parameters, and condenser scales stay at full precision, but
/// the size report counts all parameters at `bits`. `bits = 32` is a
/// pass-through that clears any previous quantization.
pub fn quantize_model(m: &mut Model, bits: u32) -> Result<QuantizeReport> {
    if bits != 8 && bits != 32 {
        return Err(Error::Quant(format!(
            "model quantization supports 8 or 32 bits, got {bits}"
        )));
    }
    let shapes: std::collections::BTreeMap<String, Vec<usize>> =
        m.param_shapes().into_iter().collect();
    m.quantized.clear();
    let mut quantized = std::collections::BTreeMap::new();
    if bits != 32 {
        for (name, values) in m.params_mut() {
            if !name.ends_with(".weight") {
                continue;
            }
            let shape = shapes.get(&name).expect("registry shape");
            let qt = quantize_tensor(values, shape, bits)?;
            let deq = qt.dequantize();
            values.copy_from_slice(&deq);
            quantized.insert(name, qt);
        }
    }
    let count = quantized.len();
    m.quantized = quantized;
    m.config.weight_bits = bits;
    let total_params = m.num_params();
    Ok(QuantizeReport {
        weight_bits: bits,
        total_params,
        model_size_kbits: model_size_kbits(total_params, bits)?,
        quantized_tensors: count,
    })
}
