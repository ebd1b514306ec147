//! The `HSAS1` model container.
//!
//! Layout: the five magic bytes `HSAS1`, then a sequence of sections, each
//! `[4-byte tag][u64 LE payload length][payload]`. All numbers are little
//! endian. Readers skip tags they do not know.
//!
//! | tag    | payload |
//! |--------|---------|
//! | `HEAD` | JSON header: dim, adapter languages, temperatures, biases |
//! | `WGT0` | `3 × dim` f32 weights, row-major |
//! | `ADPT` | per adapter language: u32 nnz, then nnz × (u32 index, 3 × f32) |
//! | `QWGT` | 3 f32 row scales, then `3 × dim` i8 codes |
//! | `QADP` | per adapter language: u32 nnz, nnz × u32 index, 3 f32 scales, packed 4-bit codes |
//! | `TFID` | JSON TF-IDF statistics |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractive::TfidfStats;
use crate::quantize::{pack_nibbles, unpack_nibbles, QuantizedAdapter, QuantizedModel, QuantizedTensor, ADAPTER_BITS, MAIN_BITS};
use crate::sentiment::{Adapter, Calibration, Scorer, SentimentModel};

pub const MAGIC: &[u8; 5] = b"HSAS1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an HSAS1 container")]
    BadMagic,
    #[error("container truncated")]
    Truncated,
    #[error("container has no HEAD section")]
    MissingHeader,
    #[error("bad header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("section {tag} is malformed")]
    Section { tag: String },
    #[error("container holds neither float nor quantized weights")]
    NoWeights,
    #[error("float and quantized models disagree on {0}")]
    Mismatch(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dim: u32,
    languages: Vec<String>,
    calibration: Calibration,
    bias: [f32; 3],
    adapter_bias: BTreeMap<String, [f32; 3]>,
    main_bits: u8,
    adapter_bits: u8,
}

/// Everything a container can hold. At least one of `float` and `quantized`
/// is present in a valid file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelFile {
    pub float: Option<SentimentModel>,
    pub quantized: Option<QuantizedModel>,
    pub tfidf: Option<TfidfStats>,
}

impl ModelFile {
    /// The quantized model when present and `prefer_quantized`, else the
    /// float one.
    pub fn scorer(&self, prefer_quantized: bool) -> Option<&dyn Scorer> {
        match (&self.float, &self.quantized) {
            (_, Some(q)) if prefer_quantized => Some(q),
            (Some(f), _) => Some(f),
            (None, Some(q)) => Some(q),
            (None, None) => None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        fs::write(path, encode(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        decode(&fs::read(path)?)
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(file: &ModelFile) -> Result<Vec<u8>, ContainerError> {
    let header = match (&file.float, &file.quantized) {
        (Some(f), q) => {
            if let Some(q) = q {
                if q.dim != f.dim {
                    return Err(ContainerError::Mismatch("dim"));
                }
                if q.adapters.keys().ne(f.adapters.keys()) {
                    return Err(ContainerError::Mismatch("adapter languages"));
                }
            }
            Header {
                dim: f.dim,
                languages: f.adapters.keys().cloned().collect(),
                calibration: f.calibration.clone(),
                bias: f.bias,
                adapter_bias: f.adapters.iter().map(|(l, a)| (l.clone(), a.bias)).collect(),
                main_bits: q.as_ref().map_or(MAIN_BITS, |q| q.weights.bits),
                adapter_bits: q.as_ref().and_then(|q| q.adapters.values().next()).map_or(ADAPTER_BITS, |a| a.tensor.bits),
            }
        }
        (None, Some(q)) => Header {
            dim: q.dim,
            languages: q.adapters.keys().cloned().collect(),
            calibration: q.calibration.clone(),
            bias: q.bias,
            adapter_bias: q.adapters.iter().map(|(l, a)| (l.clone(), a.bias)).collect(),
            main_bits: q.weights.bits,
            adapter_bits: q.adapters.values().next().map_or(ADAPTER_BITS, |a| a.tensor.bits),
        },
        (None, None) => return Err(ContainerError::NoWeights),
    };

    let mut out = MAGIC.to_vec();
    section(&mut out, b"HEAD", &serde_json::to_vec(&header)?);

    if let Some(f) = &file.float {
        let mut w = Vec::with_capacity(f.weights.len() * 4);
        put_f32s(&mut w, &f.weights);
        section(&mut out, b"WGT0", &w);

        let mut a = Vec::new();
        for adapter in f.adapters.values() {
            a.extend_from_slice(&(adapter.entries.len() as u32).to_le_bytes());
            for (j, w) in &adapter.entries {
                a.extend_from_slice(&j.to_le_bytes());
                put_f32s(&mut a, w);
            }
        }
        section(&mut out, b"ADPT", &a);
    }

    if let Some(q) = &file.quantized {
        let mut w = Vec::with_capacity(12 + q.weights.values.len());
        put_f32s(&mut w, &q.weights.scales);
        w.extend(q.weights.values.iter().map(|&v| v as u8));
        section(&mut out, b"QWGT", &w);

        let mut a = Vec::new();
        for adapter in q.adapters.values() {
            a.extend_from_slice(&(adapter.indices.len() as u32).to_le_bytes());
            for j in &adapter.indices {
                a.extend_from_slice(&j.to_le_bytes());
            }
            put_f32s(&mut a, &adapter.tensor.scales);
            if adapter.tensor.bits == 4 {
                a.extend(pack_nibbles(&adapter.tensor.values));
            } else {
                a.extend(adapter.tensor.values.iter().map(|&v| v as u8));
            }
        }
        section(&mut out, b"QADP", &a);
    }

    if let Some(t) = &file.tfidf {
        section(&mut out, b"TFID", &serde_json::to_vec(t)?);
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    tag: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], tag: &'static str) -> Self {
        Cursor { bytes, pos: 0, tag }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ContainerError::Section { tag: self.tag.into() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ContainerError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ContainerError> {
        (0..n).map(|_| self.f32()).collect()
    }

    fn finish(&self) -> Result<(), ContainerError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(ContainerError::Section { tag: self.tag.into() })
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelFile, ContainerError> {
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or(ContainerError::BadMagic)?;
    let mut sections: BTreeMap<[u8; 4], &[u8]> = BTreeMap::new();
    let mut pos = 0;
    while pos < rest.len() {
        if rest.len() - pos < 12 {
            return Err(ContainerError::Truncated);
        }
        let tag: [u8; 4] = rest[pos..pos + 4].try_into().unwrap();
        let len = u64::from_le_bytes(rest[pos + 4..pos + 12].try_into().unwrap());
        pos += 12;
        let len = usize::try_from(len).ok().filter(|&l| l <= rest.len() - pos).ok_or(ContainerError::Truncated)?;
        sections.insert(tag, &rest[pos..pos + len]);
        pos += len;
    }

    let header: Header = serde_json::from_slice(sections.get(b"HEAD").ok_or(ContainerError::MissingHeader)?)?;
    if !header.dim.is_power_of_two() || header.languages.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ContainerError::Section { tag: "HEAD".into() });
    }
    header.calibration.validate().map_err(|_| ContainerError::Section { tag: "HEAD".into() })?;
    let dim = header.dim as usize;
    let adapter_bias = |lang: &str| header.adapter_bias.get(lang).copied().unwrap_or_default();

    let float = match sections.get(b"WGT0") {
        None => None,
        Some(payload) => {
            let mut c = Cursor::new(payload, "WGT0");
            let weights = c.f32s(3 * dim)?;
            c.finish()?;
            let mut adapters = BTreeMap::new();
            let mut c = Cursor::new(sections.get(b"ADPT").copied().unwrap_or_default(), "ADPT");
            for lang in &header.languages {
                let nnz = c.u32()? as usize;
                let mut entries = Vec::with_capacity(nnz.min(dim));
                for _ in 0..nnz {
                    let j = c.u32()?;
                    entries.push((j, [c.f32()?, c.f32()?, c.f32()?]));
                }
                adapters.insert(lang.clone(), Adapter { entries, bias: adapter_bias(lang) });
            }
            c.finish()?;
            Some(SentimentModel {
                dim: header.dim,
                weights,
                bias: header.bias,
                adapters,
                calibration: header.calibration.clone(),
                quantized: None,
            })
        }
    };

    let quantized = match sections.get(b"QWGT") {
        None => None,
        Some(payload) => {
            let mut c = Cursor::new(payload, "QWGT");
            let scales = c.f32s(3)?;
            let values = c.take(3 * dim)?.iter().map(|&b| b as i8).collect();
            c.finish()?;
            let weights = QuantizedTensor { bits: header.main_bits, rows: 3, cols: dim, values, scales };
            let mut adapters = BTreeMap::new();
            let mut c = Cursor::new(sections.get(b"QADP").copied().unwrap_or_default(), "QADP");
            for lang in &header.languages {
                let nnz = c.u32()? as usize;
                let indices = (0..nnz).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
                let scales = c.f32s(3)?;
                let values = if header.adapter_bits == 4 {
                    unpack_nibbles(c.take((3 * nnz).div_ceil(2))?, 3 * nnz)
                } else {
                    c.take(3 * nnz)?.iter().map(|&b| b as i8).collect()
                };
                let tensor = QuantizedTensor { bits: header.adapter_bits, rows: 3, cols: nnz, values, scales };
                adapters.insert(lang.clone(), QuantizedAdapter { indices, tensor, bias: adapter_bias(lang) });
            }
            c.finish()?;
            Some(QuantizedModel {
                dim: header.dim,
                weights,
                bias: header.bias,
                adapters,
                calibration: header.calibration.clone(),
            })
        }
    };

    if float.is_none() && quantized.is_none() {
        return Err(ContainerError::NoWeights);
    }
    let tfidf = sections.get(b"TFID").map(|p| serde_json::from_slice(p)).transpose()?;
    let float = float.map(|mut f| {
        f.quantized = quantized.clone();
        f
    });
    Ok(ModelFile { float, quantized, tfidf })
}
