//! Hashed-feature linear sentiment classifier with per-language adapter
//! deltas and temperature calibration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::quantize::QuantizedModel;
use crate::textproc::Token;

pub const DEFAULT_DIM: u32 = 1 << 18;

/// Minimum number of validation examples before a language gets its own
/// temperature.
pub const MIN_LANG_CALIBRATION: usize = 50;

pub const TEMPERATURE_BOUNDS: (f64, f64) = (0.05, 20.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SentimentError {
    #[error("feature dimension {0} is not a power of two")]
    InvalidDim(u32),
    #[error("dimension mismatch: model has {expected}, features have {got}")]
    DimMismatch { expected: u32, got: u32 },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
}

const FNV_OFFSET: u64 = 14695981039346656037;
const FNV_PRIME: u64 = 1099511628211;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Sparse signed-count feature vector, sorted by index with no zero entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dim: u32,
    pub entries: Vec<(u32, i32)>,
}

impl FeatureVector {
    pub fn zeros(dim: u32) -> Self {
        FeatureVector { dim, entries: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Little-endian `(index, value)` pairs; used to check hashing is
    /// bit-identical across runs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.entries.len() * 8);
        out.extend_from_slice(&self.dim.to_le_bytes());
        for &(i, v) in &self.entries {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

fn hashed(feature: &str, mask: u64) -> (u32, i32) {
    let h = fnv1a64(feature.as_bytes());
    let sign = if h >> 63 == 0 { 1 } else { -1 };
    ((h & mask) as u32, sign)
}

/// Unigram and adjacent-bigram features over stems, hashed with FNV-1a 64.
/// The index is the hash masked to `dim`; bit 63 picks the sign.
pub fn featurize(tokens: &[Token], dim: u32) -> Result<FeatureVector, SentimentError> {
    featurize_stems(tokens.iter().map(|t| t.stem.as_str()), dim)
}

pub fn featurize_stems<'a>(
    stems: impl IntoIterator<Item = &'a str>,
    dim: u32,
) -> Result<FeatureVector, SentimentError> {
    if !dim.is_power_of_two() {
        return Err(SentimentError::InvalidDim(dim));
    }
    let mask = dim as u64 - 1;
    let mut acc: BTreeMap<u32, i32> = BTreeMap::new();
    let mut prev: Option<&str> = None;
    let mut bigram = String::new();
    for stem in stems {
        let (i, s) = hashed(stem, mask);
        *acc.entry(i).or_default() += s;
        if let Some(p) = prev {
            bigram.clear();
            bigram.push_str(p);
            bigram.push(' ');
            bigram.push_str(stem);
            let (i, s) = hashed(&bigram, mask);
            *acc.entry(i).or_default() += s;
        }
        prev = Some(stem);
    }
    Ok(FeatureVector { dim, entries: acc.into_iter().filter(|&(_, v)| v != 0).collect() })
}

/// Fraction of tokens per language, sorted by language code.
pub type LangMix = Vec<(String, f64)>;

pub fn lang_proportions(tokens: &[Token]) -> LangMix {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.lang.as_str()).or_default() += 1;
    }
    let n = tokens.len() as f64;
    counts.into_iter().map(|(l, c)| (l.to_string(), c as f64 / n)).collect()
}

/// Sparse additive delta for one language: `(feature index, per-class
/// weights)` sorted by index, plus a bias delta.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub entries: Vec<(u32, [f32; 3])>,
    pub bias: [f32; 3],
}

impl Adapter {
    pub fn logits(&self, x: &FeatureVector) -> [f64; 3] {
        let mut z = self.bias.map(f64::from);
        for &(j, v) in &x.entries {
            if let Ok(k) = self.entries.binary_search_by_key(&j, |e| e.0) {
                let w = self.entries[k].1;
                for c in 0..3 {
                    z[c] += w[c] as f64 * v as f64;
                }
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub global: f64,
    pub per_lang: BTreeMap<String, f64>,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { global: 1.0, per_lang: BTreeMap::new() }
    }
}

impl Calibration {
    pub fn temperature(&self, lang: &str) -> f64 {
        self.per_lang.get(lang).copied().unwrap_or(self.global)
    }

    /// Token-proportion blend of per-language temperatures.
    pub fn effective(&self, mix: &LangMix) -> f64 {
        mix.iter().map(|(l, p)| p * self.temperature(l)).sum()
    }

    pub fn validate(&self) -> Result<(), SentimentError> {
        for &t in std::iter::once(&self.global).chain(self.per_lang.values()) {
            if !(t > 0.0 && t.is_finite()) {
                return Err(SentimentError::InvalidTemperature(t));
            }
        }
        Ok(())
    }
}

/// Anything that can produce uncalibrated class logits.
pub trait Scorer {
    fn dim(&self) -> u32;
    /// `W·x + b`.
    fn base_logits(&self, x: &FeatureVector) -> [f64; 3];
    /// `A_lang·x + b_lang`, or `None` when `lang` has no adapter.
    fn adapter_logits(&self, lang: &str, x: &FeatureVector) -> Option<[f64; 3]>;
    fn calibration(&self) -> &Calibration;

    /// Base logits plus adapter logits weighted by language proportion.
    fn logits(&self, x: &FeatureVector, mix: &LangMix) -> Result<[f64; 3], SentimentError> {
        if x.dim != self.dim() {
            return Err(SentimentError::DimMismatch { expected: self.dim(), got: x.dim });
        }
        let mut z = self.base_logits(x);
        for (lang, p) in mix {
            if let Some(a) = self.adapter_logits(lang, x) {
                for c in 0..3 {
                    z[c] += a[c] * p;
                }
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentModel {
    pub dim: u32,
    /// Row-major `3 × dim`.
    pub weights: Vec<f32>,
    pub bias: [f32; 3],
    pub adapters: BTreeMap<String, Adapter>,
    pub calibration: Calibration,
    #[serde(skip)]
    pub quantized: Option<QuantizedModel>,
}

impl SentimentModel {
    pub fn zeros(dim: u32) -> Result<Self, SentimentError> {
        if !dim.is_power_of_two() {
            return Err(SentimentError::InvalidDim(dim));
        }
        Ok(SentimentModel {
            dim,
            weights: vec![0.0; 3 * dim as usize],
            bias: [0.0; 3],
            adapters: BTreeMap::new(),
            calibration: Calibration::default(),
            quantized: None,
        })
    }

    pub fn row(&self, class: usize) -> &[f32] {
        let d = self.dim as usize;
        &self.weights[class * d..(class + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
            && self.adapters.values().all(|a| {
                a.bias.iter().all(|w| w.is_finite()) && a.entries.iter().all(|(_, w)| w.iter().all(|v| v.is_finite()))
            })
    }
}

impl Scorer for SentimentModel {
    fn dim(&self) -> u32 {
        self.dim
    }

    fn base_logits(&self, x: &FeatureVector) -> [f64; 3] {
        let d = self.dim as usize;
        let mut z = self.bias.map(f64::from);
        for &(j, v) in &x.entries {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.weights[c * d + j as usize] as f64 * v as f64;
            }
        }
        z
    }

    fn adapter_logits(&self, lang: &str, x: &FeatureVector) -> Option<[f64; 3]> {
        self.adapters.get(lang).map(|a| a.logits(x))
    }

    fn calibration(&self) -> &Calibration {
        &self.calibration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub probs: [f64; 3],
    pub confidence: f64,
    pub effective_temperature: f64,
}

pub fn softmax(z: [f64; 3], temperature: f64) -> [f64; 3] {
    let scaled = z.map(|v| v / temperature);
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = scaled.map(|v| (v - max).exp());
    let sum: f64 = e.iter().sum();
    e.map(|v| v / sum)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Calibrated prediction. An empty `mix` means the whole input is in
/// `doc_lang`.
///
/// The label is taken from the raw logits, which orders classes exactly as
/// the probabilities do for any positive temperature but cannot be
/// perturbed by rounding in the division.
pub fn predict<S: Scorer + ?Sized>(
    model: &S,
    features: &FeatureVector,
    mix: &LangMix,
    doc_lang: &str,
) -> Result<Prediction, SentimentError> {
    let fallback;
    let mix = if mix.is_empty() {
        fallback = vec![(doc_lang.to_string(), 1.0)];
        &fallback
    } else {
        mix
    };
    let z = model.logits(features, mix)?;
    let t = model.calibration().effective(mix);
    let probs = softmax(z, t);
    let label = Label::from_index(argmax(&z)).expect("3 classes");
    let confidence = probs.iter().copied().fold(0.0, f64::max);
    Ok(Prediction { label, probs, confidence, effective_temperature: t })
}

/// Input to calibration: one labelled validation example.
#[derive(Debug, Clone)]
pub struct LabeledFeatures {
    pub features: FeatureVector,
    pub mix: LangMix,
    /// Document language, used to group per-language temperatures.
    pub lang: String,
    pub label: Label,
}

fn nll(logits: &[([f64; 3], usize)], t: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .map(|(z, y)| {
            let s = z.map(|v| v / t);
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - s[*y]
        })
        .sum();
    total / logits.len() as f64
}

/// Golden-section minimization on `[lo, hi]`. Returns the minimizer, its
/// value, and the best value seen after each iteration.
pub fn golden_section_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64, Vec<f64>) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let (mut best_x, mut best_f) = if fc <= fd { (c, fc) } else { (d, fd) };
    let mut trace = vec![best_f];
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        for (x, fx) in [(c, fc), (d, fd)] {
            if fx < best_f {
                best_x = x;
                best_f = fx;
            }
        }
        trace.push(best_f);
    }
    // the interval ends themselves
    for x in [lo, hi] {
        let fx = f(x);
        if fx < best_f {
            best_x = x;
            best_f = fx;
        }
    }
    (best_x, best_f, trace)
}

/// Fits a temperature minimizing mean NLL over `[0.05, 20]`.
pub fn fit_temperature(logits: &[([f64; 3], Label)]) -> f64 {
    let data: Vec<([f64; 3], usize)> = logits.iter().map(|(z, y)| (*z, y.index())).collect();
    let (lo, hi) = TEMPERATURE_BOUNDS;
    golden_section_min(|t| nll(&data, t), lo, hi, 1e-6).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub global: f64,
    pub per_lang: BTreeMap<String, f64>,
    /// Languages with too few examples for their own temperature.
    pub skipped: BTreeMap<String, usize>,
    pub nll_before: f64,
    pub nll_after: f64,
}

/// Global temperature first, then one per language with at least
/// [`MIN_LANG_CALIBRATION`] examples.
pub fn calibrate(model: &mut SentimentModel, val: &[LabeledFeatures]) -> Result<CalibrationReport, SentimentError> {
    if val.is_empty() {
        return Err(SentimentError::EmptyValidation);
    }
    let mut all = Vec::with_capacity(val.len());
    let mut by_lang: BTreeMap<&str, Vec<([f64; 3], Label)>> = BTreeMap::new();
    for ex in val {
        let mix = if ex.mix.is_empty() { vec![(ex.lang.clone(), 1.0)] } else { ex.mix.clone() };
        let z = model.logits(&ex.features, &mix)?;
        all.push((z, ex.label));
        by_lang.entry(ex.lang.as_str()).or_default().push((z, ex.label));
    }
    let indexed: Vec<([f64; 3], usize)> = all.iter().map(|(z, y)| (*z, y.index())).collect();
    let nll_before = val
        .iter()
        .zip(&indexed)
        .map(|(ex, item)| {
            let mix = if ex.mix.is_empty() { vec![(ex.lang.clone(), 1.0)] } else { ex.mix.clone() };
            nll(std::slice::from_ref(item), model.calibration.effective(&mix))
        })
        .sum::<f64>()
        / val.len() as f64;

    let global = fit_temperature(&all);
    let mut per_lang = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    for (lang, items) in &by_lang {
        if items.len() >= MIN_LANG_CALIBRATION {
            per_lang.insert(lang.to_string(), fit_temperature(items));
        } else {
            skipped.insert(lang.to_string(), items.len());
        }
    }
    model.calibration = Calibration { global, per_lang: per_lang.clone() };

    let nll_after = val
        .iter()
        .zip(&indexed)
        .map(|(ex, item)| {
            let mix = if ex.mix.is_empty() { vec![(ex.lang.clone(), 1.0)] } else { ex.mix.clone() };
            nll(std::slice::from_ref(item), model.calibration.effective(&mix))
        })
        .sum::<f64>()
        / val.len() as f64;
    Ok(CalibrationReport { global, per_lang, skipped, nll_before, nll_after })
}
