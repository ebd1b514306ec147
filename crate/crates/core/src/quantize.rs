//! Symmetric per-row weight quantization and the integer inference kernel.
//!
//! Main weights are stored at 8 bits and adapter deltas at 4 bits. Each
//! row has one positive scale; values lie in `[-(2^(b-1) - 1), 2^(b-1) - 1]`
//! (the most negative code is unused). Biases and temperatures stay float.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sentiment::{Adapter, Calibration, FeatureVector, LangMix, Scorer, SentimentModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizeError {
    #[error("unsupported bit width {0}; expected 4 or 8")]
    Bits(u8),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("shape {rows}x{cols} does not match {len} values")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(u32, u32),
}

pub fn qmax(bits: u8) -> i32 {
    (1 << (bits - 1)) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub bits: u8,
    pub rows: usize,
    pub cols: usize,
    /// Row-major codes.
    pub values: Vec<i8>,
    pub scales: Vec<f32>,
}

impl QuantizedTensor {
    pub fn row(&self, r: usize) -> &[i8] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

/// Per row: `scale = max|v| / (2^(bits-1) - 1)`, `q = round_half_even(v / scale)`.
/// An all-zero row gets scale 1 and zero codes.
pub fn quantize_tensor(values: &[f32], rows: usize, cols: usize, bits: u8) -> Result<QuantizedTensor, QuantizeError> {
    if bits != 4 && bits != 8 {
        return Err(QuantizeError::Bits(bits));
    }
    if rows * cols != values.len() {
        return Err(QuantizeError::Shape { rows, cols, len: values.len() });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(QuantizeError::NonFinite(i));
    }
    let top = qmax(bits);
    let mut codes = Vec::with_capacity(values.len());
    let mut scales = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &values[r * cols..(r + 1) * cols];
        let max = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if max == 0.0 {
            scales.push(1.0);
            codes.extend(std::iter::repeat_n(0i8, cols));
            continue;
        }
        let scale = ((max as f64 / top as f64) as f32).max(f32::MIN_POSITIVE);
        for &v in row {
            let q = (v as f64 / scale as f64).round_ties_even() as i32;
            codes.push(q.clamp(-top, top) as i8);
        }
        scales.push(scale);
    }
    Ok(QuantizedTensor { bits, rows, cols, values: codes, scales })
}

pub fn dequantize(qt: &QuantizedTensor) -> Vec<f32> {
    dequantize_f64(qt).into_iter().map(|v| v as f32).collect()
}

/// Reconstruction in double precision, `q · scale` exactly.
pub fn dequantize_f64(qt: &QuantizedTensor) -> Vec<f64> {
    (0..qt.rows)
        .flat_map(|r| {
            let s = qt.scales[r] as f64;
            qt.row(r).iter().map(move |&q| q as f64 * s)
        })
        .collect()
}

/// Integer dot products per row, scaled once at the end.
pub fn quantized_matvec(qt: &QuantizedTensor, x: &FeatureVector) -> Result<Vec<f64>, QuantizeError> {
    if qt.cols != x.dim as usize {
        return Err(QuantizeError::DimMismatch(qt.cols as u32, x.dim));
    }
    Ok((0..qt.rows)
        .map(|r| {
            let row = qt.row(r);
            let acc: i64 = x.entries.iter().map(|&(j, v)| row[j as usize] as i64 * v as i64).sum();
            acc as f64 * qt.scales[r] as f64
        })
        .collect())
}

/// Two's-complement nibbles, low nibble first. Odd lengths pad with zero.
pub fn pack_nibbles(values: &[i8]) -> Vec<u8> {
    values
        .chunks(2)
        .map(|pair| {
            let lo = pair[0] as u8 & 0x0F;
            let hi = pair.get(1).map_or(0, |&v| v as u8 & 0x0F);
            lo | (hi << 4)
        })
        .collect()
}

pub fn unpack_nibbles(bytes: &[u8], len: usize) -> Vec<i8> {
    let sign_extend = |n: u8| ((n << 4) as i8) >> 4;
    bytes
        .iter()
        .flat_map(|&b| [sign_extend(b & 0x0F), sign_extend(b >> 4)])
        .take(len)
        .collect()
}

/// A sparse adapter with 4-bit codes: one shared index list, a `3 × nnz`
/// tensor of codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedAdapter {
    pub indices: Vec<u32>,
    pub tensor: QuantizedTensor,
    pub bias: [f32; 3],
}

impl QuantizedAdapter {
    pub fn from_adapter(adapter: &Adapter, bits: u8) -> Result<Self, QuantizeError> {
        let nnz = adapter.entries.len();
        let mut rows = vec![0.0f32; 3 * nnz];
        for (k, (_, w)) in adapter.entries.iter().enumerate() {
            for c in 0..3 {
                rows[c * nnz + k] = w[c];
            }
        }
        Ok(QuantizedAdapter {
            indices: adapter.entries.iter().map(|e| e.0).collect(),
            tensor: quantize_tensor(&rows, 3, nnz, bits)?,
            bias: adapter.bias,
        })
    }

    pub fn to_adapter(&self) -> Adapter {
        let deq = dequantize(&self.tensor);
        let nnz = self.indices.len();
        Adapter {
            entries: self
                .indices
                .iter()
                .enumerate()
                .map(|(k, &j)| (j, [deq[k], deq[nnz + k], deq[2 * nnz + k]]))
                .collect(),
            bias: self.bias,
        }
    }

    fn logits(&self, x: &FeatureVector) -> [f64; 3] {
        let mut acc = [0i64; 3];
        for &(j, v) in &x.entries {
            if let Ok(k) = self.indices.binary_search(&j) {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += self.tensor.row(c)[k] as i64 * v as i64;
                }
            }
        }
        [0, 1, 2].map(|c| acc[c] as f64 * self.tensor.scales[c] as f64 + self.bias[c] as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub dim: u32,
    pub weights: QuantizedTensor,
    pub bias: [f32; 3],
    pub adapters: BTreeMap<String, QuantizedAdapter>,
    pub calibration: Calibration,
}

pub const MAIN_BITS: u8 = 8;
pub const ADAPTER_BITS: u8 = 4;

/// 8-bit main weights, 4-bit adapters.
pub fn quantize_model(model: &SentimentModel) -> Result<QuantizedModel, QuantizeError> {
    quantize_model_with(model, MAIN_BITS, ADAPTER_BITS)
}

pub fn quantize_model_with(model: &SentimentModel, main_bits: u8, adapter_bits: u8) -> Result<QuantizedModel, QuantizeError> {
    let weights = quantize_tensor(&model.weights, 3, model.dim as usize, main_bits)?;
    let adapters = model
        .adapters
        .iter()
        .map(|(l, a)| Ok((l.clone(), QuantizedAdapter::from_adapter(a, adapter_bits)?)))
        .collect::<Result<_, QuantizeError>>()?;
    Ok(QuantizedModel { dim: model.dim, weights, bias: model.bias, adapters, calibration: model.calibration.clone() })
}

/// Float model whose adapters have been through a quantize/dequantize
/// round trip at `bits`, main weights untouched.
pub fn with_requantized_adapters(model: &SentimentModel, bits: u8) -> Result<SentimentModel, QuantizeError> {
    let mut out = model.clone();
    for (lang, a) in &model.adapters {
        out.adapters.insert(lang.clone(), QuantizedAdapter::from_adapter(a, bits)?.to_adapter());
    }
    out.quantized = None;
    Ok(out)
}

impl Scorer for QuantizedModel {
    fn dim(&self) -> u32 {
        self.dim
    }

    fn base_logits(&self, x: &FeatureVector) -> [f64; 3] {
        let d = self.dim as usize;
        let mut acc = [0i64; 3];
        for &(j, v) in &x.entries {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += self.weights.values[c * d + j as usize] as i64 * v as i64;
            }
        }
        [0, 1, 2].map(|c| acc[c] as f64 * self.weights.scales[c] as f64 + self.bias[c] as f64)
    }

    fn adapter_logits(&self, lang: &str, x: &FeatureVector) -> Option<[f64; 3]> {
        self.adapters.get(lang).map(|a| a.logits(x))
    }

    fn calibration(&self) -> &Calibration {
        &self.calibration
    }
}

/// One input for agreement checks.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: FeatureVector,
    pub mix: LangMix,
    pub lang: String,
}

/// Fraction of samples on which both scorers pick the same label.
pub fn verify_agreement<A: Scorer + ?Sized, B: Scorer + ?Sized>(
    reference: &A,
    candidate: &B,
    samples: &[Sample],
) -> Result<f64, QuantizeError> {
    if reference.dim() != candidate.dim() {
        return Err(QuantizeError::DimMismatch(reference.dim(), candidate.dim()));
    }
    if samples.is_empty() {
        return Ok(1.0);
    }
    let mut agree = 0usize;
    for s in samples {
        let a = crate::sentiment::predict(reference, &s.features, &s.mix, &s.lang)
            .map_err(|_| QuantizeError::DimMismatch(reference.dim(), s.features.dim))?;
        let b = crate::sentiment::predict(candidate, &s.features, &s.mix, &s.lang)
            .map_err(|_| QuantizeError::DimMismatch(candidate.dim(), s.features.dim))?;
        agree += usize::from(a.label == b.label);
    }
    Ok(agree as f64 / samples.len() as f64)
}
